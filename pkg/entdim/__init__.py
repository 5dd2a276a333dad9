# entdim package
