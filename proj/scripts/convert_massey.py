#!/usr/bin/env python3
"""Convert a Massey-style game export to the CSV format this project ingests.

Expected input: comma-separated lines of the form

    days,date,team1,field1,score1,team2,field2,score2

where field is 1 if the team was at home, -1 if away, and 0 for a neutral
site.  Team columns may be numeric ids (pass --teams to map them to names
using a `index,name` file) or names.  Lines that do not have eight fields are
skipped with a warning.

Output columns: home_team,away_team,home_score,away_score,neutral

This is an untested convenience utility; inspect the output before use.
"""

import argparse
import csv
import sys


def load_team_names(path):
    names = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2:
                names[row[0].strip()] = row[1].strip()
    return names


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input", help="Massey-style games file")
    ap.add_argument("output", help="destination CSV")
    ap.add_argument("--teams", help="optional index,name mapping file")
    args = ap.parse_args()

    names = load_team_names(args.teams) if args.teams else {}

    def resolve(team):
        return names.get(team.strip(), team.strip())

    skipped = 0
    with open(args.input, newline="", encoding="utf-8") as src, \
         open(args.output, "w", newline="", encoding="utf-8") as dst:
        writer = csv.writer(dst)
        writer.writerow(["home_team", "away_team", "home_score", "away_score", "neutral"])
        for lineno, row in enumerate(csv.reader(src), start=1):
            if len(row) != 8:
                skipped += 1
                continue
            _, _, t1, f1, s1, t2, f2, s2 = [c.strip() for c in row]
            try:
                f1, s1, s2 = int(f1), float(s1), float(s2)
            except ValueError:
                print(f"line {lineno}: unparseable fields, skipped", file=sys.stderr)
                skipped += 1
                continue
            neutral = "true" if f1 == 0 else "false"
            if f1 >= 0:  # team1 at home, or neutral with team1 listed first
                writer.writerow([resolve(t1), resolve(t2), s1, s2, neutral])
            else:
                writer.writerow([resolve(t2), resolve(t1), s2, s1, neutral])
    if skipped:
        print(f"skipped {skipped} malformed line(s)", file=sys.stderr)


if __name__ == "__main__":
    main()
