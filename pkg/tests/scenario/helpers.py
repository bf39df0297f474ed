import os
import subprocess
import sys
from pathlib import Path

SRC_DIR = Path(__file__).parent.parent.parent / "src"
EPISODES = 3


def run_python(*args: str) -> str:
    """Run a new interpreter with the sources on the path and return its stdout."""
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(SRC_DIR), env.get("PYTHONPATH")]))
    result = subprocess.run(
        [sys.executable, *args], capture_output=True, text=True, check=True, env=env
    )
    return result.stdout
