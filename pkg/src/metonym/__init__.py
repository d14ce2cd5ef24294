"""Dataset factory and benchmark harness for visual metonymy.

The package covers the full loop: concept filtering, metonymic image
generation against pluggable model backends, distractor mining from a
commonsense knowledge graph, multiple-choice benchmark assembly and
evaluation, and a human annotation service whose labels feed back into
the filters.
"""

__version__ = "0.1.0"
