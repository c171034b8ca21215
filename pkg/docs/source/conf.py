# Sphinx configuration of the hetsense documentation.
# Build with: sphinx-build docs/source docs/build

import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join("..", "..")))

project = "hetsense"
copyright = "2026, hetsense developers"
author = "hetsense developers"
release = "0.1.0"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.viewcode",
    "sphinx.ext.mathjax",
    "myst_parser",
]

autodoc_default_options = {
    "members": True,
    "undoc-members": True,
    "show-inheritance": True,
}
autodoc_member_order = "bysource"
autodoc_typehints = "description"
autodoc_preserve_defaults = True

napoleon_google_docstring = False
napoleon_numpy_docstring = True
napoleon_use_rtype = False

myst_enable_extensions = ["dollarmath"]

source_suffix = {
    ".rst": "restructuredtext",
    ".md": "markdown",
}
exclude_patterns = []

html_theme = "pydata_sphinx_theme"
html_theme_options = {
    "show_nav_level": 3,
    "collapse_navigation": False,
}

_documented = set()


def _only_hetsense_objects(app, what, name, obj, skip, options):
    # numpy, scipy and the like are imported into our modules, keep them out
    module = getattr(obj, "__module__", None)
    if module is None:
        return skip
    if not module.startswith("hetsense") or id(obj) in _documented:
        return True
    _documented.add(id(obj))
    return skip


def setup(app):
    app.connect("autodoc-skip-member", _only_hetsense_objects)
