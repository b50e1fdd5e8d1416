"""Randomized structural checks on small random models.

Every check returns a slack that must be nonnegative within 1e-9 bits.
Corrupting one check shows the failure path: its counterexamples are
written as model documents that replay to the same slack.
"""

import tempfile

from bridgegap.verify import VerifyConfig, replay, run_verify

print(run_verify(VerifyConfig(seed=1, trials=50, caps=(8, 4, 3, 2))).to_text())

with tempfile.TemporaryDirectory() as d:
    bad = run_verify(VerifyConfig(seed=1, trials=2, caps=(8, 4, 3, 2), checks=("sandwich",),
                                  corrupt={"sandwich"}, dump_dir=d))
    print(bad.to_text())
    print("replayed:", replay(bad.checks[0].counterexamples[0]))
