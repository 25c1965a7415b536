"""Run the inference engine, the gateway and the sensor stream in one process.

Needs a trained model (``riskpipe train``). At ``--rate-hz 1`` the default
two-phase scenario takes three minutes; raise the rate to watch it quickly.
"""

import argparse
import json
import threading
import time

from riskpipe.gateway import COMPLETE, Gateway
from riskpipe.inference import InferenceService
from riskpipe.sensor import Scenario, stream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="data/model.benv")
    ap.add_argument("--scenario", default="two-phase")
    ap.add_argument("--rate-hz", type=float, default=20.0)
    ap.add_argument("--threshold", type=int, default=180)
    args = ap.parse_args()

    inference = InferenceService.from_file(args.model).server(port=0).start()
    gateway = Gateway(inference.url, threshold=args.threshold, single_session=True)
    gw_server = gateway.server(port=0).start()
    print(f"inference {inference.url}  gateway {gw_server.url}")

    done = threading.Event()

    def watch():
        last = None
        while not done.is_set():
            st = gateway.status()
            line = f"{st['state']:<10} {st['buffered']:>4}/{st['threshold']}"
            if line != last:
                print(line, flush=True)
                last = line
            time.sleep(0.05)

    watcher = threading.Thread(target=watch, daemon=True)
    watcher.start()
    try:
        report = stream(gw_server.url, Scenario.load(args.scenario), rate_hz=args.rate_hz)
        gateway.wait_for(COMPLETE, timeout=30)
        done.set()
        watcher.join()
        print("stream", json.dumps(report.to_dict()))
        print("status", json.dumps(gateway.status(), indent=2))
    finally:
        gw_server.stop()
        inference.stop()


if __name__ == "__main__":
    main()
