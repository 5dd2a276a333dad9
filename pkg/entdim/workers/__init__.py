# Empty file to make workers a Python package
