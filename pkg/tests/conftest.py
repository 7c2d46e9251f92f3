import time


def pytest_configure(config):
    config._suite_started = time.perf_counter()


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so its wall-clock check covers the whole suite
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")
