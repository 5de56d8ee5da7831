"""Message-exchange middleware for synchronized distributed best-practice automata.

Subpackages cover the binary wire protocol, the executable statechart
runtime, registration/heartbeat services, push-poll transport with
publish-subscribe gateways, a deterministic network simulator, and the
node composition layer with its control API.
"""

__version__ = "0.1.0"
