#!/usr/bin/env python3
"""Minimal external scaffold used by the adapter tests.

Talks to the harness tool server named by APE_TOOL_ENDPOINT: inspects the
task, lists the scratch directory, writes the solution handed over in
APE_SOLUTION, and submits.
"""
import json
import os
import sys
import urllib.request

ENDPOINT = os.environ["APE_TOOL_ENDPOINT"]


def post(path, args, tokens_in=3, tokens_out=4):
    body = json.dumps({
        "args": args,
        "usage": {"tokens_in": tokens_in, "tokens_out": tokens_out},
    }).encode()
    req = urllib.request.Request(ENDPOINT + path, data=body,
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as res:
        return json.loads(res.read())


def main():
    with urllib.request.urlopen(ENDPOINT + "/task") as res:
        task = json.loads(res.read())
    assert task["task_id"] == os.environ["APE_TASK_ID"], task
    assert task["kind"] == os.environ["APE_TASK_KIND"], task
    assert any(t["name"] == "edit_file" for t in task["tools"]), task

    listing = post("/tools/list_files", {"path": "scratch"})
    assert listing["ok"], listing

    edit = post("/tools/edit_file", {
        "path": "scratch/solution.toy",
        "content": os.environ["APE_SOLUTION"],
    })
    assert edit["ok"], edit

    done = post("/submit", {})
    assert done["ok"], done


if __name__ == "__main__":
    main()
    sys.exit(0)
