"""Drive the command-line pipeline end to end in a scratch directory:
train a short run on the synthetic desk preset, evaluate the resulting
codes, then look up neighbors for one database code.

Run from the repository root:  python3 demos/05_cli_pipeline.py
A couple of minutes on one core (most of it the 6-epoch training run).
"""

import tempfile
from pathlib import Path

from hashlearn.cli import main

with tempfile.TemporaryDirectory() as tmp:
    run = Path(tmp) / "run"

    print("$ hashlearn train --preset desk --k 12 --epochs 6 ...")
    code = main(["train", "--method", "srh", "--preset", "desk",
                 "--k", "12", "--alpha-over-beta", "1", "--beta", "0.01",
                 "--epochs", "6", "--seed", "1", "--out", str(run)])
    print("exit", code)
    print("artifacts:", sorted(p.name for p in run.iterdir()))

    print("\n$ hashlearn eval ...")
    main(["eval", "--query-codes", str(run / "query_codes.hlpc"),
          "--db-codes", str(run / "db_codes.hlpc"),
          "--query-labels", str(run / "query_labels.txt"),
          "--db-labels", str(run / "db_labels.txt"),
          "--precision-at", "10"])

    print("\n$ hashlearn query --code-index 0 --top 5 ...")
    main(["query", "--db-codes", str(run / "db_codes.hlpc"),
          "--query-codes", str(run / "query_codes.hlpc"),
          "--code-index", "0", "--top", "5"])

    print("\n$ hashlearn encode ... (rebuilds the db codes bit for bit)")
    out = Path(tmp) / "re.hlpc"
    main(["encode", "--checkpoint", str(run / "checkpoint.hlck"),
          "--ids", str(run / "split_db.txt"), "--preset", "desk",
          "--out", str(out)])
    print("byte-identical:",
          out.read_bytes() == (run / "db_codes.hlpc").read_bytes())
