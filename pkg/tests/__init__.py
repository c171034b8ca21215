# Enable pytest to import from this directory
