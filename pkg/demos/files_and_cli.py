"""The file formats and the command line, end to end, in a temporary folder."""

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from dpnmrf import io as dio

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)

    def run(*args):
        proc = subprocess.run([sys.executable, "-m", "dpnmrf", *args], capture_output=True, text=True)
        print("$ dpnmrf " + " ".join(args[:1]) + f"  -> exit {proc.returncode}")
        print(proc.stdout + proc.stderr, end="")
        return proc

    run("synth", "--seed", "2", "--shape", "2x32x32", "--motion", "2,1", "--out", str(tmp / "s"))
    print(sorted(p.name for p in (tmp / "s").iterdir()))
    print("unary header:", (tmp / "s" / "unary.dpt").read_bytes().split(b"\n")[0])

    io = ["--unary", str(tmp / "s/unary.dpt"), "--image", str(tmp / "s/image.ppm"),
          "--flow", str(tmp / "s/flow.flo")]
    run("infer", *io, "--out", str(tmp / "dpn.dpt"), "--labels", str(tmp / "dpn.pgm"))
    run("oracle", *io, "--out", str(tmp / "mf.dpt"), "--iters", "1", "--schedule", "sync")
    run("compare", "--a", str(tmp / "dpn.dpt"), "--b", str(tmp / "mf.dpt"))
    run("eval", "--pred", str(tmp / "dpn.pgm"), "--gt", str(tmp / "s/gt.pgm"), "--frames", "2",
        "--json", str(tmp / "m.json"))
    run("bench", "--paper-config")

    (tmp / "bad.dpt").write_bytes(b"DPT 1 1 2 2 3\n" + bytes(47))
    try:
        dio.read_tensor(tmp / "bad.dpt")
    except dio.TruncatedPayloadError as e:
        print("short payload:", e)
    flow = dio.read_flo(tmp / "s/flow.flo", frames=1)
    print("flow is constant:", np.unique(flow.reshape(-1, 2), axis=0))
