"""kgsidecar: model-serving HTTP sidecar for the note-to-KG pipeline.

Hosts embedding, NER, extractive-QA, and generation models behind four small
JSON endpoints (/embed, /ner, /qa, /generate) plus /health.
"""

__version__ = "0.1.0"

from .service import SidecarConfig, SidecarError, create_app, serve

__all__ = ["SidecarConfig", "SidecarError", "create_app", "serve", "__version__"]
