"""Context-aware smartphone-use intervention engine.

Selects a persuasion strategy from the user's reported mental state,
assembles a slot-filled prompt, streams generated persuasive content,
and records every decision so effectiveness metrics can be computed.
A seeded persona simulator drives the whole pipeline end to end.
"""

__version__ = "0.1.0"
