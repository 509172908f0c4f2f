"""Integration tests package.""" 