"""End-to-end checks of the molly command line.

Usage: test_cli.py <molly-binary> <source-dir>
"""

import json
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

MOLLY = ""
SRC = Path()
QUESTION = "什么是列表?"


def molly(*args, cwd=None):
    return subprocess.run([MOLLY, *map(str, args)], capture_output=True, text=True,
                          cwd=cwd, timeout=120)


def mock_ask(*extra, playbook="all_pass"):
    return molly("ask", QUESTION, "--kb", SRC / "data/sample_kb.jsonl", "--backend", "mock",
                 "--playbook", SRC / f"data/playbooks/{playbook}.jsonl", *extra)


class Stats(unittest.TestCase):
    def test_table_rows(self):
        r = molly("stats", "--kb", SRC / "data/sample_kb.jsonl")
        self.assertEqual(r.returncode, 0, r.stderr)
        row = next(l for l in r.stdout.splitlines() if l.startswith("Number of dialogues"))
        self.assertEqual(row.split("|")[1].strip(), "20")
        self.assertIn("Number of answers containing code", r.stdout)

    def test_json_matches_oracle(self):
        r = molly("stats", "--kb", SRC / "data/sample_kb.jsonl", "--json")
        self.assertEqual(r.returncode, 0, r.stderr)
        oracle = subprocess.run([sys.executable, SRC / "tests/oracles/dataset_stats.py",
                                 SRC / "data/sample_kb.jsonl"],
                                capture_output=True, text=True, check=True)
        self.assertEqual(json.loads(r.stdout), json.loads(oracle.stdout))


class Ingest(unittest.TestCase):
    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as d:
            out = Path(d) / "kb.jsonl"
            r = molly("ingest", "--input", SRC / "data/sample_kb.jsonl", "--out", out)
            self.assertEqual(r.returncode, 0, r.stderr)
            self.assertEqual(len(out.read_text(encoding="utf-8").splitlines()), 20)

    def test_duplicate_id_names_the_line(self):
        lines = (SRC / "data/sample_kb.jsonl").read_text(encoding="utf-8").splitlines()
        with tempfile.TemporaryDirectory() as d:
            src = Path(d) / "dup.jsonl"
            src.write_text("\n".join([lines[0], lines[1], lines[0]]) + "\n", encoding="utf-8")
            r = molly("ingest", "--input", src, "--out", Path(d) / "kb.jsonl")
            self.assertEqual(r.returncode, 1)
            self.assertIn("DuplicateId", r.stderr)
            self.assertIn("line 3", r.stderr)
            self.assertFalse((Path(d) / "kb.jsonl").exists())


class Ask(unittest.TestCase):
    def test_trace_covers_every_stage(self):
        r = mock_ask("--trace")
        self.assertEqual(r.returncode, 0, r.stderr)
        t = json.loads(r.stdout)
        stages = [c["stage_tag"] for c in t["call_log"]]
        for tag in ("perception_teacher", "perception_student", "generation",
                    "reflection_critic"):
            self.assertIn(tag, stages)
        self.assertEqual(len(t["drafts"]), 1)
        self.assertTrue(t["resolved"])
        self.assertEqual(t["final_answer"], t["drafts"][0]["answer_text"])

    def test_plain_output_is_the_final_answer(self):
        trace = json.loads(mock_ask("--trace").stdout)
        plain = mock_ask()
        self.assertEqual(plain.returncode, 0, plain.stderr)
        self.assertEqual(plain.stdout.rstrip("\n"), trace["final_answer"])

    def test_runs_are_byte_identical(self):
        outputs = {mock_ask("--trace").stdout for _ in range(3)}
        self.assertEqual(len(outputs), 1)

    def test_revision_loop(self):
        t = json.loads(mock_ask("--trace", playbook="fail_fail_pass").stdout)
        self.assertEqual(len(t["drafts"]), 3)
        self.assertEqual(len(t["verdicts"]), 3)
        self.assertEqual(t["final_answer"], t["drafts"][2]["answer_text"])

    def test_no_perception(self):
        t = json.loads(mock_ask("--trace", "--no-perception").stdout)
        self.assertEqual(t["query"], QUESTION)
        self.assertIsNone(t["perception"])
        self.assertNotIn("perception_teacher", [c["stage_tag"] for c in t["call_log"]])

    def test_no_reflection(self):
        t = json.loads(mock_ask("--trace", "--no-reflection").stdout)
        self.assertEqual(len(t["drafts"]), 1)
        self.assertEqual(t["verdicts"], [])
        self.assertIsNone(t["resolved"])

    def test_exhausted_playbook_fails(self):
        r = mock_ask(playbook="exhausted")
        self.assertNotEqual(r.returncode, 0)
        self.assertIn("PlaybookExhausted", r.stderr)


class Arguments(unittest.TestCase):
    def test_unknown_flag_rejected(self):
        r = mock_ask("--definitely-not-a-flag")
        self.assertNotEqual(r.returncode, 0)
        self.assertIn("definitely-not-a-flag", r.stderr)

    def test_missing_subcommand(self):
        self.assertNotEqual(molly().returncode, 0)

    def test_missing_kb_file(self):
        r = molly("stats", "--kb", SRC / "no/such/file.jsonl")
        self.assertNotEqual(r.returncode, 0)
        self.assertEqual(r.stdout, "")


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    MOLLY, SRC = sys.argv[1], Path(sys.argv[2])
    unittest.main(argv=sys.argv[:1], verbosity=2)
