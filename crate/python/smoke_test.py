"""Exercise the Python bindings end to end on a small trace."""

import os
import tempfile

import nicsim_py as ns


def main():
    assert ns.concurrency_requirement(40.0, 4.16) == 325
    cols = ns.table1()
    assert len(cols) == 3
    assert all(abs(c - p) <= 1 for col in cols for c, p in zip(col["computed"], col["published"]))

    text = ns.golden_check()
    assert "== end of walkthrough" in text

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.bin")
        events = ns.gen_trace(path, requests=300, population=5000, seed=3)
        assert events > 600

        base = ns.simulate(path, "[workload]\nrequests = 2000\n", {"nic.offload_enable": "false"})
        on = ns.simulate(path, "[workload]\nrequests = 2000\n")
        assert base["requests_completed"] == 2000
        assert base["trace_hash"] == on["trace_hash"]
        assert on["nic_insts_per_packet"] > base["nic_insts_per_packet"] - 1e-9

        try:
            ns.simulate(path, overrides={"core.cores": "0"})
        except ValueError:
            pass
        else:
            raise AssertionError("zero cores accepted")

    print("smoke test ok: mean latency %.1f ns -> %.1f ns" % (base["latency_mean_ns"], on["latency_mean_ns"]))


if __name__ == "__main__":
    main()
