#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "hetddi/relational.hpp"
#include "hetddi/rng.hpp"

using namespace hetddi;

namespace {

// Exhaustive substitution enumeration over the whole protein table. Slow and
// simple on purpose: the production counter must agree with it exactly.
std::int64_t bruteForceCount(const Rule& rule, const std::string& d1,
                             const std::string& d2, const KnowledgeBase& kb) {
  int maxVar = -1;
  for (const auto& lit : rule.body) maxVar = std::max(maxVar, lit.proteinVar);
  std::vector<bool> positiveVar(static_cast<std::size_t>(maxVar + 1), false);
  for (const auto& lit : rule.body) {
    if (!lit.negated) positiveVar[static_cast<std::size_t>(lit.proteinVar)] = true;
  }
  std::vector<int> posVars;
  for (int v = 0; v <= maxVar; ++v) {
    if (positiveVar[static_cast<std::size_t>(v)]) posVars.push_back(v);
  }
  const int P = static_cast<int>(kb.proteinCount());
  const int d1c = kb.drugId(d1);
  const int d2c = kb.drugId(d2);
  std::vector<int> assign(static_cast<std::size_t>(maxVar + 1), -1);
  std::int64_t count = 0;

  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == posVars.size()) {
      for (const auto& lit : rule.body) {
        const int drug = lit.drugVar == 0 ? d1c : d2c;
        const int pred = kb.predicateId(lit.predicate);
        if (!lit.negated) {
          if (!kb.hasFact(pred, drug,
                          assign[static_cast<std::size_t>(lit.proteinVar)])) {
            return;
          }
        } else if (positiveVar[static_cast<std::size_t>(lit.proteinVar)]) {
          if (kb.hasFact(pred, drug,
                         assign[static_cast<std::size_t>(lit.proteinVar)])) {
            return;
          }
        } else {
          for (int p = 0; p < P; ++p) {
            if (kb.hasFact(pred, drug, p)) return;
          }
        }
      }
      ++count;
      return;
    }
    for (int p = 0; p < P; ++p) {
      assign[static_cast<std::size_t>(posVars[i])] = p;
      rec(i + 1);
    }
  };
  rec(0);
  return count;
}

const char* kPaperFacts =
    "TargetAgonist(\"Goserelin\",\"Gonadotropin releasing hormone "
    "receptor\").\n"
    "EnzymeInhibitor(\"Azithromycin\",\"Cytochrome P450 2A6\").\n"
    "TransporterInducer(\"Alfentanil\",\"Multidrug resistance protein "
    "1\").\n";

// Six drugs; interaction = sharing an inhibited enzyme. a/b inhibit e1,
// c/d inhibit e2, e/f inhibit nothing. Everyone targets something so all
// six drugs exist as constants and useless candidates are available.
KnowledgeBase sixDrugKb() {
  KnowledgeBase kb;
  kb.addFact("EnzymeInhibitor", "a", "e1");
  kb.addFact("EnzymeInhibitor", "b", "e1");
  kb.addFact("EnzymeInhibitor", "c", "e2");
  kb.addFact("EnzymeInhibitor", "d", "e2");
  kb.addFact("Target", "a", "t1");
  kb.addFact("Target", "b", "t1");
  kb.addFact("Target", "c", "t2");
  kb.addFact("Target", "d", "t2");
  kb.addFact("Target", "e", "t3");
  kb.addFact("Target", "f", "t3");
  return kb;
}

std::vector<PairExample> sixDrugExamples() {
  const std::vector<std::string> drugs{"a", "b", "c", "d", "e", "f"};
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < drugs.size(); ++i) {
    for (std::size_t j = i + 1; j < drugs.size(); ++j) {
      const bool share = (drugs[i] == "a" && drugs[j] == "b") ||
                         (drugs[i] == "c" && drugs[j] == "d");
      out.push_back({drugs[i], drugs[j], share ? 1 : 0});
    }
  }
  return out;
}

Rule makeRule(std::vector<RuleLiteral> body) {
  return Rule{std::move(body), 0.0};
}

}  // namespace

TEST_CASE("facts parse into an interned knowledge base") {
  const KnowledgeBase kb = parseFacts(kPaperFacts);
  CHECK(kb.factCount() == 3);
  CHECK(kb.predicateCount() == 3);
  CHECK(kb.drugCount() == 3);
  CHECK(kb.proteinCount() == 3);
  CHECK(kb.duplicatesDropped() == 0);
  CHECK(kb.predicateId("EnzymeInhibitor") >= 0);
  CHECK(kb.predicateId("enzymeinhibitor") == -1);  // case-sensitive
  CHECK(kb.drugId("Azithromycin") >= 0);
  CHECK(kb.proteinId("Cytochrome P450 2A6") >= 0);

  const int pred = kb.predicateId("EnzymeInhibitor");
  const int drug = kb.drugId("Azithromycin");
  CHECK(kb.hasFact(pred, drug, kb.proteinId("Cytochrome P450 2A6")));
  CHECK(kb.proteinsFor(pred, drug).size() == 1);
  CHECK(kb.proteinsFor(pred, kb.drugId("Goserelin")).empty());
}

TEST_CASE("empty input gives an empty knowledge base") {
  const KnowledgeBase kb = parseFacts("  % nothing but a comment\n");
  CHECK(kb.factCount() == 0);
  CHECK(kb.predicateCount() == 0);
}

TEST_CASE("duplicate facts are dropped and counted") {
  const KnowledgeBase kb = parseFacts(
      "Target(\"a\",\"p\").\n"
      "Target(\"a\",\"p\").  % repeated\n"
      "Target(\"a\",\"q\").\n");
  CHECK(kb.factCount() == 2);
  CHECK(kb.duplicatesDropped() == 1);
}

TEST_CASE("fact syntax errors carry line and column positions") {
  try {
    parseFacts("Target(\"a\",\"p\").\nTarget(\"a\" \"p\").\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.col() == 12);
  }

  CHECK_THROWS_AS(parseFacts("Target(\"a\").\n"), ParseError);       // arity 1
  CHECK_THROWS_AS(parseFacts("T(\"a\",\"b\",\"c\").\n"), ParseError);  // arity 3
  CHECK_THROWS_AS(parseFacts("Target(\"a\",\"p\")\n"), ParseError);  // no dot
  CHECK_THROWS_AS(parseFacts("Target(\"a\",\"p\n\").\n"), ParseError);
  CHECK_THROWS_AS(parseFacts("Target(\"\",\"p\").\n"), ParseError);
  CHECK_THROWS_AS(parseFacts("123(\"a\",\"p\").\n"), ParseError);
}

TEST_CASE("single positive literal counts matching facts") {
  const KnowledgeBase kb = parseFacts(kPaperFacts);
  const Rule rule = makeRule({{"EnzymeInhibitor", 0, 0, false}});
  CHECK(countGroundings(rule, "Azithromycin", "Goserelin", kb) == 1);
  CHECK(countGroundings(rule, "Goserelin", "Azithromycin", kb) == 0);
  CHECK(countGroundings(rule, "NoSuchDrug", "Azithromycin", kb) == 0);
}

TEST_CASE("grounding counts on an empty knowledge base") {
  const KnowledgeBase kb;
  const Rule positive = makeRule({{"EnzymeInhibitor", 0, 0, false}});
  CHECK(countGroundings(positive, "x", "y", kb) == 0);

  const Rule emptyBody = makeRule({});
  CHECK(countGroundings(emptyBody, "x", "y", kb) == 1);

  const Rule negatedOnly = makeRule({{"EnzymeInhibitor", 0, 0, true}});
  CHECK(countGroundings(negatedOnly, "x", "y", kb) == 1);
}

TEST_CASE("joint chains count shared proteins") {
  KnowledgeBase kb = sixDrugKb();
  kb.addFact("EnzymeInhibitor", "a", "e2");  // a now inhibits e1 and e2
  const Rule chain = makeRule(
      {{"EnzymeInhibitor", 0, 0, false}, {"EnzymeInhibitor", 1, 0, false}});
  // a shares e1 with b
  CHECK(countGroundings(chain, "a", "b", kb) == 1);
  // a shares e2 with c and d
  CHECK(countGroundings(chain, "a", "c", kb) == 1);
  // b and c share nothing
  CHECK(countGroundings(chain, "b", "c", kb) == 0);
  // two independent fresh variables multiply
  const Rule product = makeRule(
      {{"EnzymeInhibitor", 0, 0, false}, {"EnzymeInhibitor", 1, 1, false}});
  CHECK(countGroundings(product, "a", "b", kb) == 2);  // {e1,e2} x {e1}
}

TEST_CASE("negation over a bound variable filters assignments") {
  const KnowledgeBase kb = sixDrugKb();
  // enzymes of d1 that d2 does NOT inhibit
  const Rule rule = makeRule(
      {{"EnzymeInhibitor", 0, 0, false}, {"EnzymeInhibitor", 1, 0, true}});
  CHECK(countGroundings(rule, "a", "b", kb) == 0);  // b inhibits e1 too
  CHECK(countGroundings(rule, "a", "c", kb) == 1);  // c does not inhibit e1
}

TEST_CASE("negation with a local variable means no fact at all") {
  const KnowledgeBase kb = sixDrugKb();
  const Rule rule = makeRule({{"EnzymeInhibitor", 0, 0, true}});
  CHECK(countGroundings(rule, "e", "a", kb) == 1);  // e inhibits nothing
  CHECK(countGroundings(rule, "a", "e", kb) == 0);  // a inhibits e1
}

TEST_CASE("variables shared by negations alone are malformed") {
  const KnowledgeBase kb = sixDrugKb();
  const Rule rule = makeRule(
      {{"EnzymeInhibitor", 0, 5, true}, {"Target", 1, 5, true}});
  CHECK_THROWS_AS(countGroundings(rule, "a", "b", kb), MalformedRuleError);

  const Rule bad = makeRule({{"Target", 3, 0, false}});
  CHECK_THROWS_AS(countGroundings(bad, "a", "b", kb), MalformedRuleError);
}

TEST_CASE("grounding counts match exhaustive enumeration on random KBs") {
  Rng rng(2025);
  const std::vector<std::string> preds{"P", "Q", "R", "S"};
  const std::vector<std::string> drugs{"d0", "d1", "d2", "d3"};
  const std::vector<std::string> prots{"p0", "p1", "p2", "p3"};
  for (int trial = 0; trial < 300; ++trial) {
    KnowledgeBase kb;
    const int nFacts = rng.belowInt(20);
    for (int f = 0; f < nFacts; ++f) {
      kb.addFact(preds[static_cast<std::size_t>(rng.belowInt(4))],
                 drugs[static_cast<std::size_t>(rng.belowInt(4))],
                 prots[static_cast<std::size_t>(rng.belowInt(4))]);
    }
    // random well-formed rule: positives introduce variables in order,
    // negation-local variables get unique indices from 100 up
    Rule rule;
    const int nLits = 1 + rng.belowInt(4);
    int bound = 0;
    int localNext = 100;
    for (int l = 0; l < nLits; ++l) {
      RuleLiteral lit;
      lit.predicate = preds[static_cast<std::size_t>(rng.belowInt(4))];
      lit.drugVar = rng.belowInt(2);
      lit.negated = rng.uniform() < 0.35;
      if (!lit.negated) {
        lit.proteinVar = rng.belowInt(bound + 1);
        if (lit.proteinVar == bound) ++bound;
      } else if (bound > 0 && rng.uniform() < 0.6) {
        lit.proteinVar = rng.belowInt(bound);
      } else {
        lit.proteinVar = localNext++;
      }
      rule.body.push_back(std::move(lit));
    }
    const std::string& a = drugs[static_cast<std::size_t>(rng.belowInt(4))];
    const std::string& b = drugs[static_cast<std::size_t>(rng.belowInt(4))];
    const auto fast = countGroundings(rule, a, b, kb);
    const auto slow = bruteForceCount(rule, a, b, kb);
    CHECK_MESSAGE(fast == slow, "trial ", trial, ": ", ruleText(rule),
                  " on (", a, ",", b, ") fast=", fast, " slow=", slow);
  }
}

TEST_CASE("adding facts never lowers negation-free counts") {
  Rng rng(77);
  const std::vector<std::string> preds{"P", "Q"};
  const std::vector<std::string> drugs{"d0", "d1", "d2"};
  const std::vector<std::string> prots{"p0", "p1", "p2"};
  for (int trial = 0; trial < 50; ++trial) {
    Rule rule;
    const int nLits = 1 + rng.belowInt(3);
    int bound = 0;
    for (int l = 0; l < nLits; ++l) {
      RuleLiteral lit;
      lit.predicate = preds[static_cast<std::size_t>(rng.belowInt(2))];
      lit.drugVar = rng.belowInt(2);
      lit.proteinVar = rng.belowInt(bound + 1);
      if (lit.proteinVar == bound) ++bound;
      rule.body.push_back(std::move(lit));
    }
    KnowledgeBase kb;
    std::int64_t last = countGroundings(rule, "d0", "d1", kb);
    for (int f = 0; f < 15; ++f) {
      kb.addFact(preds[static_cast<std::size_t>(rng.belowInt(2))],
                 drugs[static_cast<std::size_t>(rng.belowInt(3))],
                 prots[static_cast<std::size_t>(rng.belowInt(3))]);
      const std::int64_t now = countGroundings(rule, "d0", "d1", kb);
      CHECK(now >= last);
      last = now;
    }
  }
}

TEST_CASE("tree learning recovers a shared-enzyme interaction rule") {
  const KnowledgeBase kb = sixDrugKb();
  const auto examples = sixDrugExamples();
  RrtConfig cfg;
  cfg.minExamples = 2;
  const RrtTree tree = learnRrt(examples, kb, cfg);

  REQUIRE_FALSE(tree.root->isLeaf);
  CHECK(tree.root->split ==
        RuleLiteral{"EnzymeInhibitor", 1, 0, false});
  REQUIRE_FALSE(tree.root->yes->isLeaf);
  CHECK(tree.root->yes->split ==
        RuleLiteral{"EnzymeInhibitor", 0, 0, false});

  const RuleSet rules = extractRules(tree);
  REQUIRE(rules.rules.size() == 3);
  CHECK(ruleText(rules.rules[0]) ==
        "interacts(D1,D2) :- EnzymeInhibitor(D2,V0), "
        "EnzymeInhibitor(D1,V0).");
  CHECK(ruleText(rules.rules[1]) ==
        "interacts(D1,D2) :- EnzymeInhibitor(D2,V0), "
        "\\+ EnzymeInhibitor(D1,V0).");
  CHECK(ruleText(rules.rules[2]) ==
        "interacts(D1,D2) :- \\+ EnzymeInhibitor(D2,V0).");
  CHECK(rules.rules[0].leafValue == 1.0);
  CHECK(rules.rules[1].leafValue == 0.0);
  CHECK(rules.rules[2].leafValue == 0.0);
}

TEST_CASE("chosen root split scores at least as well as every candidate") {
  const KnowledgeBase kb = sixDrugKb();
  const auto examples = sixDrugExamples();
  RrtConfig cfg;
  cfg.minExamples = 2;
  const RrtTree tree = learnRrt(examples, kb, cfg);
  REQUIRE_FALSE(tree.root->isLeaf);

  // re-score every root candidate independently, using grounding counts as
  // the satisfiability test
  auto gain = [&](const RuleLiteral& lit) {
    double sum = 0.0, sum2 = 0.0, ySum = 0.0, ySum2 = 0.0, yN = 0.0;
    const double n = static_cast<double>(examples.size());
    for (const auto& ex : examples) {
      const double t = ex.label;
      sum += t;
      sum2 += t * t;
      if (countGroundings(makeRule({lit}), ex.a, ex.b, kb) > 0) {
        ySum += t;
        ySum2 += t * t;
        yN += 1.0;
      }
    }
    auto sse = [](double s, double s2, double m) {
      return m > 0.0 ? s2 - s * s / m : 0.0;
    };
    return sse(sum, sum2, n) - sse(ySum, ySum2, yN) -
           sse(sum - ySum, sum2 - ySum2, n - yN);
  };

  const double chosen = gain(tree.root->split);
  for (const std::string& pred : kb.predicateNames()) {
    for (int dv = 0; dv < 2; ++dv) {
      CHECK(chosen >= gain(RuleLiteral{pred, dv, 0, false}));
    }
  }
}

TEST_CASE("uniform targets collapse to a single leaf") {
  const KnowledgeBase kb = sixDrugKb();
  std::vector<PairExample> examples{{"a", "b", 1}, {"c", "d", 1}};
  const RrtTree tree = learnRrt(examples, kb, RrtConfig{});
  REQUIRE(tree.root->isLeaf);
  CHECK(tree.root->value == 1.0);

  const RuleSet rules = extractRules(tree);
  REQUIRE(rules.rules.size() == 1);
  CHECK(rules.rules[0].body.empty());
  CHECK(ruleText(rules.rules[0]) == "interacts(D1,D2).");
  CHECK(countGroundings(rules.rules[0], "a", "b", kb) == 1);
}

TEST_CASE("an empty knowledge base learns a single-leaf tree") {
  const KnowledgeBase kb;
  std::vector<PairExample> examples{{"a", "b", 1}, {"c", "d", 0}};
  const RrtTree tree = learnRrt(examples, kb, RrtConfig{});
  REQUIRE(tree.root->isLeaf);
  CHECK(tree.root->value == 0.5);
}

TEST_CASE("depth-one trees extract a literal and its negation") {
  const KnowledgeBase kb = sixDrugKb();
  RrtConfig cfg;
  cfg.maxDepth = 1;
  cfg.minExamples = 2;
  const RuleSet rules = extractRules(learnRrt(sixDrugExamples(), kb, cfg));
  REQUIRE(rules.rules.size() == 2);
  REQUIRE(rules.rules[0].body.size() == 1);
  REQUIRE(rules.rules[1].body.size() == 1);
  CHECK_FALSE(rules.rules[0].body[0].negated);
  CHECK(rules.rules[1].body[0].negated);
  CHECK(rules.rules[0].body[0].predicate == rules.rules[1].body[0].predicate);
}

TEST_CASE("leaf values equal the mean of their targets") {
  const KnowledgeBase kb = sixDrugKb();
  const auto examples = sixDrugExamples();
  RrtConfig cfg;
  cfg.maxDepth = 1;
  cfg.minExamples = 2;
  const RrtTree tree = learnRrt(examples, kb, cfg);
  REQUIRE_FALSE(tree.root->isLeaf);

  double ySum = 0.0, yN = 0.0, nSum = 0.0, nN = 0.0;
  for (const auto& ex : examples) {
    const Rule lit = makeRule({tree.root->split});
    if (countGroundings(lit, ex.a, ex.b, kb) > 0) {
      ySum += ex.label;
      yN += 1.0;
    } else {
      nSum += ex.label;
      nN += 1.0;
    }
  }
  CHECK(std::abs(tree.root->yes->value - ySum / yN) < 1e-12);
  CHECK(std::abs(tree.root->no->value - nSum / nN) < 1e-12);
}

TEST_CASE("tree learning is deterministic") {
  const KnowledgeBase kb = sixDrugKb();
  const auto examples = sixDrugExamples();
  RrtConfig cfg;
  cfg.minExamples = 2;
  const std::string t1 = ruleSetText(extractRules(learnRrt(examples, kb, cfg)));
  const std::string t2 = ruleSetText(extractRules(learnRrt(examples, kb, cfg)));
  CHECK(t1 == t2);
  CHECK_FALSE(t1.empty());
}

TEST_CASE("negation-local variables stay distinct across branches") {
  // a/b interact through a shared enzyme, c/d through a shared carrier, so
  // the tree splits on a fresh variable again under the root's no branch.
  // The two paths that end in consecutive negations must use distinct
  // variable names or the extracted rules would be malformed.
  KnowledgeBase kb;
  kb.addFact("EnzymeInhibitor", "a", "e1");
  kb.addFact("EnzymeInhibitor", "b", "e1");
  kb.addFact("Carrier", "c", "k1");
  kb.addFact("Carrier", "d", "k1");
  kb.addFact("Target", "e", "t3");
  kb.addFact("Target", "f", "t3");
  const auto examples = sixDrugExamples();

  RrtConfig cfg;
  cfg.minExamples = 2;
  const RuleSet rules = extractRules(learnRrt(examples, kb, cfg));
  REQUIRE(rules.rules.size() == 4);
  CHECK(ruleText(rules.rules[0]) ==
        "interacts(D1,D2) :- EnzymeInhibitor(D2,V0).");
  CHECK(ruleText(rules.rules[1]) ==
        "interacts(D1,D2) :- \\+ EnzymeInhibitor(D2,V0), Carrier(D1,V1), "
        "Carrier(D2,V1).");
  CHECK(ruleText(rules.rules[2]) ==
        "interacts(D1,D2) :- \\+ EnzymeInhibitor(D2,V0), Carrier(D1,V1), "
        "\\+ Carrier(D2,V1).");
  CHECK(ruleText(rules.rules[3]) ==
        "interacts(D1,D2) :- \\+ EnzymeInhibitor(D2,V0), \\+ "
        "Carrier(D1,V1).");
  CHECK(rules.rules[0].leafValue == 1.0);
  CHECK(rules.rules[1].leafValue == 1.0);
  CHECK(rules.rules[2].leafValue == 0.0);
  CHECK(rules.rules[3].leafValue == 0.0);

  // every rule passes the counter's well-formedness validation, and the
  // embeddings line up with which mechanism connects each pair
  for (const auto& r : rules.rules) {
    CHECK_NOTHROW(countGroundings(r, "a", "b", kb));
  }
  CHECK(relationalEmbed(rules, {"a", "b", 1}, kb) ==
        std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(relationalEmbed(rules, {"c", "d", 1}, kb) ==
        std::vector<double>{0.0, 1.0, 0.0, 0.0});
  CHECK(relationalEmbed(rules, {"e", "f", 0}, kb) ==
        std::vector<double>{0.0, 0.0, 0.0, 1.0});
}

TEST_CASE("rule text round-trips through the parser") {
  const KnowledgeBase kb = sixDrugKb();
  RrtConfig cfg;
  cfg.minExamples = 2;
  const RuleSet rules = extractRules(learnRrt(sixDrugExamples(), kb, cfg));
  const RuleSet back = parseRules(ruleSetText(rules));
  REQUIRE(back.rules.size() == rules.rules.size());
  for (std::size_t i = 0; i < rules.rules.size(); ++i) {
    CHECK(back.rules[i].body == rules.rules[i].body);
  }

  CHECK_THROWS_AS(parseRules("interacts(D1,D2) :- P(D3,V0).\n"), ParseError);
  CHECK_THROWS_AS(parseRules("wrong(D1,D2).\n"), ParseError);
  CHECK_THROWS_AS(parseRules("interacts(D1,D2) :- P(D1,V0)\n"), ParseError);
}

TEST_CASE("pair embeddings are grounding-count vectors") {
  const KnowledgeBase kb = sixDrugKb();
  RrtConfig cfg;
  cfg.minExamples = 2;
  const RuleSet rules = extractRules(learnRrt(sixDrugExamples(), kb, cfg));
  REQUIRE(rules.rules.size() == 3);

  const auto ab = relationalEmbed(rules, {"a", "b", 1}, kb);
  REQUIRE(ab.size() == 3);
  CHECK(ab[0] == 1.0);  // shared enzyme e1
  CHECK(ab[1] == 0.0);
  CHECK(ab[2] == 0.0);

  const auto ef = relationalEmbed(rules, {"e", "f", 0}, kb);
  CHECK(ef == std::vector<double>{0.0, 0.0, 1.0});

  // positive-bodied rules over an empty KB embed to zero
  const KnowledgeBase empty;
  const RuleSet positives{{makeRule({{"P", 0, 0, false}}),
                           makeRule({{"Q", 1, 0, false}})}};
  const auto zeros = relationalEmbed(positives, {"x", "y", 0}, empty);
  CHECK(zeros == std::vector<double>{0.0, 0.0});
}
