"""For future integration testing."""
