# Sphinx configuration for the fdmod API reference.
#
# Build with `sphinx-build -b html docs docs/_build` from the repository root,
# in the environment described by docs/environment.yml.

import os
import sys

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, ROOT)

project = "fdmod"
author = "fdmod developers"
copyright = "2026, fdmod developers"
release = "1.0.0"
version = ".".join(release.split(".")[:2])

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
]

# Docstrings follow the numpy layout: Parameters, Returns, Raises.
napoleon_numpy_docstring = True
napoleon_google_docstring = False
napoleon_use_rtype = False

# Backticked names in docstrings are arguments or attributes, not references.
default_role = "code"

autodoc_member_order = "bysource"
autoclass_content = "class"
autodoc_typehints = "none"
# Only the distributed MPI transport needs it; the docs build runs without MPI.
autodoc_mock_imports = ["mpi4py"]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
    "pandas": ("https://pandas.pydata.org/docs", None),
    "joblib": ("https://joblib.readthedocs.io/en/latest", None),
}

exclude_patterns = ["_build"]

html_theme = "furo"
html_title = f"fdmod {release}"
