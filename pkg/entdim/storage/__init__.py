# Empty file to make storage a Python package
