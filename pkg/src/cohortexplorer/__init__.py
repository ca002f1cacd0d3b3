"""Clinical cohort exploration engine.

Building blocks: a canonical patient/event datamodel, ingestion of CSV
and JSON-lines sources into a two-tier document store, an immutable
nested-document index, a faceted query engine with temporal constraints
and free-text search, a dictionary/rule text-annotation pipeline with
negation detection, a focus-aligned timeline engine, and an HTTP/JSON
workbench service plus a CLI.
"""

__version__ = "0.1.0"

from . import datamodel, demo, extract, index, ingest, query, timeline

__all__ = ["datamodel", "demo", "extract", "index", "ingest", "query", "timeline", "__version__"]
