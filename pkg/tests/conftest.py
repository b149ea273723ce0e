def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size numerical runs taking minutes; deselect with -m 'not slow'")
