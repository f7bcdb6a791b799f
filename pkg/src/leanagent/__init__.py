"""Self-hosted CLI agent runtime.

A per-session agent loop over a minimal atomic toolkit, a four-layer
on-demand memory store, a character-budget context ledger, a
trajectory-to-procedure-to-code evolution pipeline, and a curriculum-scored
exploration planner. Everything runs offline against a deterministic
scripted backend for testing.
"""

__version__ = "0.1.0"
