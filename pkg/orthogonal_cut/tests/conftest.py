def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-size acceptance runs')
