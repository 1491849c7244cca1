"""LACE: a co-creative image studio with deterministic generation.

Subsystems:

- :mod:`lace.raster` - RGBA images, compositing, hashing, PNG I/O.
- :mod:`lace.engine` - prompt-seeded procedural generation over latent vectors.
- :mod:`lace.layers` - non-destructive layer stack and provenance graph.
- :mod:`lace.session` - per-session orchestration, event log, replay.
- :mod:`lace.service` - HTTP/JSON front door with a server-push event stream.
- :mod:`lace.study` - scripted-session replay and non-parametric statistics.
"""

__version__ = "0.1.0"
