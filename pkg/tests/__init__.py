"""
Tests package.

Test files follow the naming convention: test_<module>.py
Run tests with: pytest tests/
"""
