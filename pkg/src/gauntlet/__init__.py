"""Privacy-analysis testbed for web clients.

Packages an intercepting gateway with record/replay, a fixture site farm,
DOM tripwire collection, PII/history leak detection, connection-security
probes, and a comparative scoring pipeline behind one CLI.
"""

__version__ = "0.1.0"
