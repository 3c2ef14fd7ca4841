"""Conformance run against a live bridge server.

Skipped unless ZEROGEN_BRIDGE points at a running server; the sidecar
package's own test suite sets this up and drives these checks end to end.
"""

import os

import pytest

from zerogen.bridge import BridgeClient, run_conformance

ENDPOINT = os.environ.get("ZEROGEN_BRIDGE")

pytestmark = pytest.mark.skipif(not ENDPOINT, reason="no bridge endpoint configured")


def test_live_bridge_conformance():
    with BridgeClient(ENDPOINT) as client:
        checks = run_conformance(client)
    for check in checks:
        print(f"bridge conformance: {check.name}: {'ok' if check.ok else 'FAIL'} {check.detail}")
    failures = [c for c in checks if not c.ok]
    assert not failures, failures
