"""fume/__main__.py"""

from fume.harness.cli import cli

if __name__ == '__main__':
    cli()
