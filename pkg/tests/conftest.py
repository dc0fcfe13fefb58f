# anchors tests/ on sys.path so test modules can share the oracles module
