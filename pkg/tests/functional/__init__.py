"""Functional tests package.""" 