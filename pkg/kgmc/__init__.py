"""
    kgmc
    ~~~~

    Knowledge Graph Map Conflation: match and merge two vector geospatial databases.
"""
__version__ = '0.1.0'
