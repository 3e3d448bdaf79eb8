#!/usr/bin/env python3
"""Generate the bundled mini-language corpus.

The mini-language is a small Python-like imperative language with the
keywords def/if/else/for/in/while/return, integer and string literals,
#-comments and significant indentation. Output is deterministic for a
given seed. Documents are separated by a line containing only "#%%".

usage: gen_corpus.py [--seed N] [--docs N] OUT
"""

import argparse
import random

NOUNS = [
    "item", "value", "count", "total", "score", "node", "entry", "word",
    "price", "size", "row", "col", "key", "name", "index", "step", "limit",
    "weight", "level", "depth", "width", "height", "offset", "amount",
    "record", "token", "line", "page", "user", "order",
]
PLURALS = {n: n + "s" for n in NOUNS}
PLURALS.update({"index": "indices", "entry": "entries"})
VERBS = [
    "compute", "count", "find", "collect", "filter", "check", "build",
    "merge", "scale", "clamp", "update", "sum", "reduce", "select", "parse",
]
MESSAGES = ["done", "empty", "not found", "ok", "error", "skip", "start", "end"]


class Gen:
    def __init__(self, rng):
        self.rng = rng

    def noun(self):
        return self.rng.choice(NOUNS)

    def num(self, lo=0, hi=10):
        return str(self.rng.randint(lo, hi))

    def cmp_op(self):
        return self.rng.choice(["==", "!=", "<", ">", "<=", ">="])

    def arith_op(self):
        return self.rng.choice(["+", "-", "*", "/", "%"])

    def expr(self, names, depth=0):
        r = self.rng.random()
        if depth > 1 or r < 0.35:
            return self.rng.choice(names)
        if r < 0.55:
            return self.num(1, 9)
        if r < 0.8:
            return "%s %s %s" % (self.rng.choice(names), self.arith_op(), self.expr(names, depth + 1))
        return "(%s %s %s)" % (self.rng.choice(names), self.arith_op(), self.num(1, 9))

    def cond(self, names):
        a = self.rng.choice(names)
        r = self.rng.random()
        if r < 0.3:
            return "%s %% %s == 0" % (a, self.num(2, 5))
        if r < 0.6:
            return "%s %s %s" % (a, self.cmp_op(), self.num(0, 20))
        return "%s %s %s" % (a, self.cmp_op(), self.rng.choice(names))

    def comment(self, text, ind):
        return "    " * ind + "# " + text

    # ---- function templates -------------------------------------------------

    def f_accumulate(self):
        n = self.noun()
        xs = PLURALS[n]
        acc = self.rng.choice(["total", "result", "acc", "sum_value"])
        op = self.rng.choice(["+", "*", "-"])
        init = "1" if op == "*" else "0"
        verb = self.rng.choice(["sum", "reduce", "compute", "combine"])
        lines = ["# %s the %s of all %s" % (verb, acc, xs),
                 "def %s_%s(%s):" % (verb, xs, xs),
                 "    %s = %s" % (acc, init),
                 "    for %s in %s:" % (n, xs)]
        if self.rng.random() < 0.5:
            lines.append("        if %s:" % self.cond([n, acc]))
            lines.append("            %s = %s %s %s" % (acc, acc, op, n))
        else:
            lines.append("        %s = %s %s %s" % (acc, acc, op, n))
        lines.append("    return %s" % acc)
        return lines

    def f_count(self):
        n = self.noun()
        xs = PLURALS[n]
        c = self.rng.choice(["count", "hits", "matches", "found"])
        lines = ["# count %s that match the condition" % xs,
                 "def count_%s(%s, %s):" % (xs, xs, "limit"),
                 "    %s = 0" % c,
                 "    for %s in %s:" % (n, xs),
                 "        if %s:" % self.cond([n, "limit"]),
                 "            %s += 1" % c,
                 "    return %s" % c]
        return lines

    def f_max(self):
        n = self.noun()
        xs = PLURALS[n]
        best = self.rng.choice(["best", "largest", "top", "peak"])
        cmp = self.rng.choice([">", "<"])
        kind = "max" if cmp == ">" else "min"
        lines = ["# return the %s %s" % (kind, n),
                 "def %s_%s(%s):" % (kind, n, xs),
                 "    if len(%s) == 0:" % xs,
                 "        return %s" % self.rng.choice(["0", "-1", "\"%s\"" % self.rng.choice(MESSAGES)]),
                 "    %s = %s[0]" % (best, xs),
                 "    for %s in %s:" % (n, xs),
                 "        if %s %s %s:" % (n, cmp, best),
                 "            %s = %s" % (best, n),
                 "    return %s" % best]
        return lines

    def f_filter(self):
        n = self.noun()
        xs = PLURALS[n]
        out = self.rng.choice(["result", "kept", "out", "selected"])
        lines = ["# keep only the %s we want" % xs,
                 "def %s_%s(%s):" % (self.rng.choice(["filter", "select", "collect"]), xs, xs),
                 "    %s = []" % out,
                 "    for %s in %s:" % (n, xs),
                 "        if %s:" % self.cond([n]),
                 "            %s.append(%s)" % (out, n)]
        if self.rng.random() < 0.4:
            lines.append("        else:")
            lines.append("            print(\"%s\")" % self.rng.choice(MESSAGES))
        lines.append("    return %s" % out)
        return lines

    def f_search(self):
        n = self.noun()
        xs = PLURALS[n]
        lines = ["# find the position of target in %s" % xs,
                 "def find_%s(%s, target):" % (n, xs),
                 "    i = 0",
                 "    while i < len(%s):" % xs,
                 "        if %s[i] == target:" % xs,
                 "            return i",
                 "        i = i + 1",
                 "    return -1"]
        return lines

    def f_loop_range(self):
        a = self.rng.choice(["n", "limit", "size", "steps"])
        acc = self.rng.choice(["total", "result", "value"])
        lines = ["# loop over a range of numbers",
                 "def %s_%s(%s):" % (self.rng.choice(VERBS), acc, a),
                 "    %s = %s" % (acc, self.num(0, 1)),
                 "    for i in range(%s):" % a]
        body = self.rng.random()
        if body < 0.4:
            lines.append("        %s = %s + i * %s" % (acc, acc, self.num(1, 4)))
        elif body < 0.7:
            lines.append("        if i %% %s == 0:" % self.num(2, 4))
            lines.append("            %s = %s + i" % (acc, acc))
            lines.append("        else:")
            lines.append("            %s = %s - %s" % (acc, acc, self.num(1, 3)))
        else:
            lines.append("        %s += %s" % (acc, self.expr(["i", a])))
        lines.append("    return %s" % acc)
        return lines

    def f_recursive(self):
        kind = self.rng.choice(["factorial", "fib", "power", "gcd"])
        if kind == "factorial":
            return ["# recursive factorial",
                    "def factorial(n):",
                    "    if n <= 1:",
                    "        return 1",
                    "    return n * factorial(n - 1)"]
        if kind == "fib":
            return ["# fibonacci number",
                    "def fib(n):",
                    "    if n < 2:",
                    "        return n",
                    "    return fib(n - 1) + fib(n - 2)"]
        if kind == "power":
            return ["# raise base to exp",
                    "def power(base, exp):",
                    "    if exp == 0:",
                    "        return 1",
                    "    return base * power(base, exp - 1)"]
        return ["# greatest common divisor",
                "def gcd(a, b):",
                "    while b != 0:",
                "        t = b",
                "        b = a % b",
                "        a = t",
                "    return a"]

    def f_clamp(self):
        n = self.noun()
        lo, hi = self.rng.choice([("low", "high"), ("lo", "hi"), ("min_value", "max_value")])
        return ["# clamp %s into a range" % n,
                "def clamp_%s(%s, %s, %s):" % (n, n, lo, hi),
                "    if %s < %s:" % (n, lo),
                "        return %s" % lo,
                "    if %s > %s:" % (n, hi),
                "        return %s" % hi,
                "    return %s" % n]

    def f_string(self):
        n = self.noun()
        msg = self.rng.choice(MESSAGES)
        lines = ["# describe a %s" % n,
                 "def describe_%s(%s):" % (n, n),
                 "    if %s == 0:" % n,
                 "        return \"%s\"" % msg,
                 "    label = \"%s\"" % n]
        if self.rng.random() < 0.5:
            lines.append("    label = label + str(%s)" % n)
        lines.append("    print(label)")
        lines.append("    return label")
        return lines

    def f_nested(self):
        r = self.rng.choice(["rows", "grid", "table", "matrix"])
        acc = self.rng.choice(["total", "count", "result"])
        lines = ["# walk every cell of the %s" % r,
                 "def walk_%s(%s):" % (r, r),
                 "    %s = 0" % acc,
                 "    for row in %s:" % r,
                 "        for cell in row:"]
        if self.rng.random() < 0.5:
            lines.append("            if %s:" % self.cond(["cell", acc]))
            lines.append("                %s = %s + cell" % (acc, acc))
        else:
            lines.append("            %s += 1" % acc)
        lines.append("    return %s" % acc)
        return lines

    def f_update(self):
        n = self.noun()
        xs = PLURALS[n]
        f = self.rng.choice(["2", "3", "10", "factor"])
        params = "%s, factor" % xs if f == "factor" else xs
        lines = ["# scale every %s in place" % n,
                 "def scale_%s(%s):" % (xs, params),
                 "    i = 0",
                 "    while i < len(%s):" % xs,
                 "        %s[i] = %s[i] * %s" % (xs, xs, f),
                 "        i += 1",
                 "    return %s" % xs]
        return lines

    def f_main(self, defined):
        n = self.noun()
        xs = PLURALS[n]
        vals = ", ".join(self.num(0, 20) for _ in range(self.rng.randint(3, 6)))
        lines = ["# entry point",
                 "def main():",
                 "    %s = [%s]" % (xs, vals)]
        for name, arity in self.rng.sample(defined, min(len(defined), self.rng.randint(1, 3))):
            args = ", ".join([xs] + [self.num(1, 9) for _ in range(arity - 1)])
            lines.append("    print(%s(%s))" % (name, args))
        lines.append("    return 0")
        return lines

    TEMPLATES = [
        "f_accumulate", "f_count", "f_max", "f_filter", "f_search",
        "f_loop_range", "f_recursive", "f_clamp", "f_string", "f_nested", "f_update",
    ]

    def document(self):
        funcs = []
        defined = []
        for _ in range(self.rng.randint(3, 6)):
            lines = getattr(self, self.rng.choice(self.TEMPLATES))()
            header = lines[1]
            name = header[4:header.index("(")]
            arity = header.count(",") + 1
            defined.append((name, arity))
            funcs.append("\n".join(lines))
        if self.rng.random() < 0.6:
            funcs.append("\n".join(self.f_main(defined)))
        return "\n\n".join(funcs) + "\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--docs", type=int, default=160)
    ap.add_argument("out")
    args = ap.parse_args()
    gen = Gen(random.Random(args.seed))
    docs = [gen.document() for _ in range(args.docs)]
    with open(args.out, "w") as f:
        f.write("#%%\n".join(docs))


if __name__ == "__main__":
    main()
