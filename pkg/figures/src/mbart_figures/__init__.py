"""Figure scripts over the regression CLI's CSV outputs.

Each module renders one figure kind from the documented CSV headers and
writes a static image; nothing here recomputes statistics.
"""
