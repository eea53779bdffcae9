"""Python bindings of the tracead core."""

try:
    from ._tracead import *  # noqa: F401,F403
    from ._tracead import __doc__  # noqa: F401
except ImportError:  # in-tree build: the extension sits next to the package
    from _tracead import *  # noqa: F401,F403

__all__ = [
    "Error",
    "DataError",
    "ProtocolError",
    "RunStats",
    "merge_stats",
    "unmerge_stats",
    "label_span",
    "select_context_indices",
    "compute_overhead",
    "reduction_report",
    "compare_labels",
    "synth",
    "run_offline",
    "trace_sources",
    "query_provenance",
    "ParamServer",
    "VizGateway",
]
