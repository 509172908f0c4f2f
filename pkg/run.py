"""run.py"""

from fume.harness.cli import cli

if __name__ == '__main__':
    # Run the command group
    cli()
