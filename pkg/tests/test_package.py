def test_package_version():
    import rssgeo

    assert rssgeo.__version__, "Package version is not defined."
    assert rssgeo.__version__ != "unknown", "Package version is unknown."
