"""Species-tree reconstruction from estimated orthology via cograph editing
and rooted-triple consistency."""

from paratree.model import (
    Event,
    Hierarchy,
    Node,
    Tree,
    Triple,
    TripleSet,
    displayed_triples,
    hierarchy_of,
    newick_parse,
    newick_write,
    tree_from_hierarchy,
)

__version__ = "0.1.0"

__all__ = [
    "Event",
    "Hierarchy",
    "Node",
    "Tree",
    "Triple",
    "TripleSet",
    "displayed_triples",
    "hierarchy_of",
    "newick_parse",
    "newick_write",
    "tree_from_hierarchy",
]
