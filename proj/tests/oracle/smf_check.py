#!/usr/bin/env python3
"""Convert every golden tune with abc2smf and read the result back with mido.

usage: smf_check.py ABC2SMF GOLDEN_DIR
Exit 77 (skip) when mido is not installed.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

try:
    import mido
except ImportError:
    print("mido not installed; skipping")
    sys.exit(77)


def notes(path):
    mid = mido.MidiFile(path)
    assert mid.ticks_per_beat == 480, mid.ticks_per_beat
    assert mid.type == 1, mid.type
    out = []
    for track_no, track in enumerate(mid.tracks):
        now = 0
        sounding = {}
        for msg in track:
            now += msg.time
            if msg.type == "note_on" and msg.velocity > 0:
                sounding.setdefault((msg.channel, msg.note), []).append(now)
            elif msg.type in ("note_off", "note_on"):
                onset = sounding[(msg.channel, msg.note)].pop(0)
                out.append((track_no - 1, onset, now - onset, msg.note))
        assert not any(sounding.values()), f"{path}: unterminated note"
    return sorted(out, key=lambda t: (t[1], t[0], t[3], t[2]))


def main():
    tool, golden = sys.argv[1], Path(sys.argv[2])
    failures = 0
    tunes = sorted(golden.glob("*.abc"))
    with tempfile.TemporaryDirectory() as tmp:
        for abc in tunes:
            mid = Path(tmp) / (abc.stem + ".mid")
            subprocess.run([tool, str(abc), str(mid)], check=True)
            want = [tuple(map(int, line.split())) for line in abc.with_suffix(".events").read_text().splitlines() if line.strip()]
            got = notes(mid)
            if got != want:
                failures += 1
                print(f"{abc.name}: mido reads {len(got)} notes, expected {len(want)}")
                for g, w in zip(got, want):
                    if g != w:
                        print(f"  first difference: got {g}, want {w}")
                        break
    print(f"{len(tunes) - failures}/{len(tunes)} tunes match")
    return 1 if failures or not tunes else 0


if __name__ == "__main__":
    sys.exit(main())
