"""treegraph: tree-ensemble feature graphs for interpretable multi-omics classification."""

__version__ = "0.1.0"
__author__ = "treegraph developers"
__description__ = "Boosted-tree feature graphs feeding a graph-masked multi-omics neural classifier"
