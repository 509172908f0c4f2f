"""Unit tests package.""" 