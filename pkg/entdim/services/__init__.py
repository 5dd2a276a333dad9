# Empty file to make services a Python package
