import sys

from groundcap.util.cli import run_cmd

sys.exit(run_cmd())
