#include "hetddi/relational.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hetddi {

namespace {

constexpr int kIdBits = 21;
constexpr int kMaxId = 1 << kIdBits;

int intern(std::unordered_map<std::string, int>& ids,
           std::vector<std::string>& names, const std::string& name) {
  auto [it, inserted] = ids.emplace(name, static_cast<int>(names.size()));
  if (inserted) {
    names.push_back(name);
    if (names.size() > static_cast<std::size_t>(kMaxId)) {
      throw DataError("constant table overflow");
    }
  }
  return it->second;
}

const std::vector<int>& emptyIntVector() {
  static const std::vector<int> empty;
  return empty;
}

}  // namespace

std::uint64_t KnowledgeBase::key(int predicate, int drug, int protein) {
  return (static_cast<std::uint64_t>(predicate) << (2 * kIdBits)) |
         (static_cast<std::uint64_t>(drug) << kIdBits) |
         static_cast<std::uint64_t>(protein);
}

bool KnowledgeBase::addFact(const std::string& predicate,
                            const std::string& drug,
                            const std::string& protein) {
  const int p = intern(predicateIds_, predicateNames_, predicate);
  const int d = intern(drugIds_, drugNames_, drug);
  const int r = intern(proteinIds_, proteinNames_, protein);
  const auto [it, inserted] = facts_.insert(key(p, d, r));
  (void)it;
  if (!inserted) {
    ++duplicates_;
    return false;
  }
  byPredDrug_[key(p, d, 0) >> kIdBits].push_back(r);
  return true;
}

int KnowledgeBase::predicateId(const std::string& name) const {
  const auto it = predicateIds_.find(name);
  return it == predicateIds_.end() ? -1 : it->second;
}

int KnowledgeBase::drugId(const std::string& name) const {
  const auto it = drugIds_.find(name);
  return it == drugIds_.end() ? -1 : it->second;
}

int KnowledgeBase::proteinId(const std::string& name) const {
  const auto it = proteinIds_.find(name);
  return it == proteinIds_.end() ? -1 : it->second;
}

bool KnowledgeBase::hasFact(int predicate, int drug, int protein) const {
  if (predicate < 0 || drug < 0 || protein < 0) return false;
  return facts_.count(key(predicate, drug, protein)) > 0;
}

const std::vector<int>& KnowledgeBase::proteinsFor(int predicate,
                                                   int drug) const {
  if (predicate < 0 || drug < 0) return emptyIntVector();
  const auto it = byPredDrug_.find(key(predicate, drug, 0) >> kIdBits);
  return it == byPredDrug_.end() ? emptyIntVector() : it->second;
}

namespace {

class FactScanner {
 public:
  explicit FactScanner(const std::string& text) : s_(text) {}

  bool atEnd() {
    skipLayout();
    return pos_ >= s_.size();
  }

  void parseFact(KnowledgeBase& kb) {
    skipLayout();
    const std::string pred = identifier();
    skipLayout();
    expect('(');
    skipLayout();
    const std::string drug = quoted();
    skipLayout();
    if (peek() == ')') {
      fail("facts take two arguments");
    }
    expect(',');
    skipLayout();
    const std::string protein = quoted();
    skipLayout();
    if (peek() == ',') {
      fail("facts take two arguments");
    }
    expect(')');
    skipLayout();
    expect('.');
    kb.addFact(pred, drug, protein);
  }

 private:
  int peek() const {
    return pos_ < s_.size() ? static_cast<unsigned char>(s_[pos_]) : -1;
  }

  void advance() {
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skipLayout() {
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '%') {
        while (pos_ < s_.size() && s_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, line_, col_);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  std::string identifier() {
    const int c = peek();
    if (c < 0 || !(std::isalpha(c) || c == '_')) {
      fail("expected a predicate name");
    }
    std::string out;
    while (pos_ < s_.size()) {
      const char ch = s_[pos_];
      if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
        out.push_back(ch);
        advance();
      } else {
        break;
      }
    }
    return out;
  }

  std::string quoted() {
    if (peek() != '"') fail("expected a quoted constant");
    advance();
    std::string out;
    for (;;) {
      const int c = peek();
      if (c < 0 || c == '\n') fail("unterminated string");
      advance();
      if (c == '"') break;
      out.push_back(static_cast<char>(c));
    }
    if (out.empty()) fail("empty constant");
    return out;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

}  // namespace

KnowledgeBase parseFacts(const std::string& text) {
  KnowledgeBase kb;
  FactScanner scanner(text);
  while (!scanner.atEnd()) {
    scanner.parseFact(kb);
  }
  return kb;
}

KnowledgeBase readFactsFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parseFacts(ss.str());
}

std::string ruleText(const Rule& rule) {
  std::string out = "interacts(D1,D2)";
  if (rule.body.empty()) return out + ".";
  out += " :- ";
  for (std::size_t i = 0; i < rule.body.size(); ++i) {
    const RuleLiteral& lit = rule.body[i];
    if (i > 0) out += ", ";
    if (lit.negated) out += "\\+ ";
    out += lit.predicate + "(D" + std::to_string(lit.drugVar + 1) + ",V" +
           std::to_string(lit.proteinVar) + ")";
  }
  return out + ".";
}

std::string ruleSetText(const RuleSet& rules) {
  std::string out;
  for (const Rule& r : rules.rules) {
    out += ruleText(r);
    out += '\n';
  }
  return out;
}

void writeRulesFile(const std::string& path, const RuleSet& rules) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << ruleSetText(rules);
  if (!os) throw IoError("write to '" + path + "' failed");
}

namespace {

class RuleScanner {
 public:
  RuleScanner(const std::string& text, int line) : s_(text), line_(line) {}

  Rule parseClause() {
    Rule rule;
    expectWord("interacts");
    expect('(');
    expectWord("D1");
    expect(',');
    expectWord("D2");
    expect(')');
    skipSpace();
    if (peek() == '.') {
      advance();
      return rule;
    }
    expect(':');
    expect('-');
    for (;;) {
      skipSpace();
      RuleLiteral lit;
      if (peek() == '\\') {
        advance();
        expect('+');
        lit.negated = true;
        skipSpace();
      }
      lit.predicate = identifier();
      expect('(');
      lit.drugVar = drugVariable();
      expect(',');
      lit.proteinVar = proteinVariable();
      expect(')');
      rule.body.push_back(std::move(lit));
      skipSpace();
      if (peek() == ',') {
        advance();
        continue;
      }
      expect('.');
      break;
    }
    skipSpace();
    if (pos_ < s_.size()) fail("trailing characters after clause");
    return rule;
  }

 private:
  int peek() const {
    return pos_ < s_.size() ? static_cast<unsigned char>(s_[pos_]) : -1;
  }
  void advance() { ++pos_; }

  void skipSpace() {
    while (pos_ < s_.size() &&
           std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      ++pos_;
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, line_, static_cast<int>(pos_) + 1);
  }

  void expect(char c) {
    skipSpace();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  void expectWord(const std::string& word) {
    skipSpace();
    if (s_.compare(pos_, word.size(), word) != 0) {
      fail("expected '" + word + "'");
    }
    pos_ += word.size();
  }

  std::string identifier() {
    skipSpace();
    const int c = peek();
    if (c < 0 || !(std::isalpha(c) || c == '_')) {
      fail("expected a predicate name");
    }
    std::string out;
    while (pos_ < s_.size()) {
      const char ch = s_[pos_];
      if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
        out.push_back(ch);
        ++pos_;
      } else {
        break;
      }
    }
    return out;
  }

  int drugVariable() {
    skipSpace();
    if (peek() != 'D') fail("expected D1 or D2");
    advance();
    const int c = peek();
    if (c != '1' && c != '2') fail("expected D1 or D2");
    advance();
    return c - '1';
  }

  int proteinVariable() {
    skipSpace();
    if (peek() != 'V') fail("expected a protein variable V<n>");
    advance();
    if (!std::isdigit(peek())) fail("expected a protein variable V<n>");
    int v = 0;
    while (pos_ < s_.size() &&
           std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + (s_[pos_] - '0');
      ++pos_;
    }
    return v;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_;
};

}  // namespace

RuleSet parseRules(const std::string& text) {
  RuleSet rules;
  std::istringstream is(text);
  std::string line;
  int lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    RuleScanner scanner(line, lineNo);
    rules.rules.push_back(scanner.parseClause());
  }
  return rules;
}

RuleSet readRulesFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parseRules(ss.str());
}

namespace {

// Distinct variable bindings (tuples over the bound protein variables) that
// satisfy the path query for one example.
using Bindings = std::vector<std::vector<int>>;

struct NodeExample {
  int d1 = -1;  // drug constants, -1 when absent from the KB
  int d2 = -1;
  double target = 0.0;
  Bindings bindings;
};

struct Candidate {
  std::string predicate;
  int predId = -1;
  int drugVar = 0;
  int proteinVar = 0;
};

// Satisfiability of query ∧ candidate for one example; when `out` is given,
// fills it with the surviving (possibly extended) bindings.
bool satisfies(const Candidate& c, const NodeExample& ex, int boundVars,
               const KnowledgeBase& kb, Bindings* out) {
  const int drug = c.drugVar == 0 ? ex.d1 : ex.d2;
  if (drug < 0 || c.predId < 0) return false;
  bool any = false;
  for (const auto& tuple : ex.bindings) {
    if (c.proteinVar < boundVars) {
      if (kb.hasFact(c.predId, drug, tuple[static_cast<std::size_t>(
                                         c.proteinVar)])) {
        if (!out) return true;
        any = true;
        out->push_back(tuple);
      }
    } else {
      for (int p : kb.proteinsFor(c.predId, drug)) {
        if (!out) return true;
        any = true;
        auto extended = tuple;
        extended.push_back(p);
        out->push_back(std::move(extended));
      }
    }
  }
  return any;
}

double sse(double sum, double sum2, double n) {
  return n > 0.0 ? sum2 - sum * sum / n : 0.0;
}

std::unique_ptr<RrtNode> grow(std::vector<NodeExample>& examples,
                              int boundVars, int depth,
                              const KnowledgeBase& kb, const RrtConfig& cfg) {
  auto node = std::make_unique<RrtNode>();
  double sum = 0.0, sum2 = 0.0;
  for (const auto& ex : examples) {
    sum += ex.target;
    sum2 += ex.target * ex.target;
  }
  const double n = static_cast<double>(examples.size());
  node->value = sum / n;

  const double nodeSse = sse(sum, sum2, n);
  if (depth >= cfg.maxDepth ||
      examples.size() < static_cast<std::size_t>(cfg.minExamples) ||
      nodeSse <= 1e-12) {
    return node;
  }

  std::vector<std::string> predicates = kb.predicateNames();
  std::sort(predicates.begin(), predicates.end());

  Candidate best;
  double bestGain = 1e-9;
  bool haveBest = false;
  for (const auto& pred : predicates) {
    Candidate c;
    c.predicate = pred;
    c.predId = kb.predicateId(pred);
    for (c.drugVar = 0; c.drugVar < 2; ++c.drugVar) {
      for (c.proteinVar = 0; c.proteinVar <= boundVars; ++c.proteinVar) {
        double ySum = 0.0, ySum2 = 0.0, yN = 0.0;
        for (const auto& ex : examples) {
          if (satisfies(c, ex, boundVars, kb, nullptr)) {
            ySum += ex.target;
            ySum2 += ex.target * ex.target;
            yN += 1.0;
          }
        }
        const double gain = nodeSse - sse(ySum, ySum2, yN) -
                            sse(sum - ySum, sum2 - ySum2, n - yN);
        if (gain > bestGain) {
          bestGain = gain;
          best = c;
          haveBest = true;
        }
      }
    }
  }
  if (!haveBest) return node;

  std::vector<NodeExample> yes, no;
  for (auto& ex : examples) {
    Bindings survived;
    if (satisfies(best, ex, boundVars, kb, &survived)) {
      yes.push_back({ex.d1, ex.d2, ex.target, std::move(survived)});
    } else {
      no.push_back(std::move(ex));
    }
  }
  const int yesBound = best.proteinVar == boundVars ? boundVars + 1 : boundVars;

  node->isLeaf = false;
  node->split =
      RuleLiteral{best.predicate, best.drugVar, best.proteinVar, false};
  node->yes = grow(yes, yesBound, depth + 1, kb, cfg);
  node->no = grow(no, boundVars, depth + 1, kb, cfg);
  return node;
}

}  // namespace

RrtTree learnRrt(const std::vector<PairExample>& examples,
                 const KnowledgeBase& kb, const RrtConfig& cfg) {
  if (cfg.maxDepth < 0) throw ConfigError("max depth must be >= 0");
  if (cfg.minExamples < 1) throw ConfigError("min examples must be >= 1");
  if (examples.empty()) throw DataError("no training examples");

  std::vector<NodeExample> nodeExamples;
  nodeExamples.reserve(examples.size());
  for (const auto& ex : examples) {
    NodeExample ne;
    ne.d1 = kb.drugId(ex.a);
    ne.d2 = kb.drugId(ex.b);
    ne.target = static_cast<double>(ex.label);
    ne.bindings = {{}};
    nodeExamples.push_back(std::move(ne));
  }
  RrtTree tree;
  tree.root = grow(nodeExamples, 0, 0, kb, cfg);
  return tree;
}

namespace {

void walkRules(const RrtNode* node, std::vector<RuleLiteral>& path,
               std::vector<int>& varNames, int nextVar, RuleSet& out) {
  if (node->isLeaf) {
    out.rules.push_back(Rule{path, node->value});
    return;
  }
  const int treeVar = node->split.proteinVar;
  const bool fresh = treeVar >= static_cast<int>(varNames.size());
  const int ruleVar =
      fresh ? nextVar : varNames[static_cast<std::size_t>(treeVar)];
  const int afterNext = fresh ? nextVar + 1 : nextVar;

  RuleLiteral lit{node->split.predicate, node->split.drugVar, ruleVar, false};

  path.push_back(lit);
  if (fresh) varNames.push_back(ruleVar);
  walkRules(node->yes.get(), path, varNames, afterNext, out);
  if (fresh) varNames.pop_back();
  path.pop_back();

  lit.negated = true;
  path.push_back(lit);
  walkRules(node->no.get(), path, varNames, afterNext, out);
  path.pop_back();
}

}  // namespace

RuleSet extractRules(const RrtTree& tree) {
  if (!tree.root) throw DataError("empty tree");
  RuleSet out;
  std::vector<RuleLiteral> path;
  std::vector<int> varNames;
  walkRules(tree.root.get(), path, varNames, 0, out);
  return out;
}

namespace {

struct ResolvedLiteral {
  int predId = -1;
  int drug = -1;  // constant, -1 when absent from the KB
  int var = 0;
  bool negated = false;
};

std::int64_t countRec(const std::vector<ResolvedLiteral>& positives,
                      const std::vector<ResolvedLiteral>& negatives,
                      std::size_t idx, std::vector<int>& assign,
                      const std::vector<bool>& positiveVar,
                      const KnowledgeBase& kb) {
  if (idx == positives.size()) {
    for (const auto& lit : negatives) {
      if (positiveVar[static_cast<std::size_t>(lit.var)]) {
        if (kb.hasFact(lit.predId, lit.drug,
                       assign[static_cast<std::size_t>(lit.var)])) {
          return 0;
        }
      } else if (!kb.proteinsFor(lit.predId, lit.drug).empty()) {
        return 0;
      }
    }
    return 1;
  }
  const auto& lit = positives[idx];
  int& slot = assign[static_cast<std::size_t>(lit.var)];
  if (slot >= 0) {
    if (!kb.hasFact(lit.predId, lit.drug, slot)) return 0;
    return countRec(positives, negatives, idx + 1, assign, positiveVar, kb);
  }
  std::int64_t total = 0;
  for (int p : kb.proteinsFor(lit.predId, lit.drug)) {
    slot = p;
    total += countRec(positives, negatives, idx + 1, assign, positiveVar, kb);
  }
  slot = -1;
  return total;
}

}  // namespace

std::int64_t countGroundings(const Rule& rule, const std::string& d1,
                             const std::string& d2, const KnowledgeBase& kb) {
  int maxVar = -1;
  for (const auto& lit : rule.body) {
    if (lit.drugVar != 0 && lit.drugVar != 1) {
      throw MalformedRuleError("drug variable out of range");
    }
    if (lit.proteinVar < 0) {
      throw MalformedRuleError("negative protein variable");
    }
    maxVar = std::max(maxVar, lit.proteinVar);
  }
  std::vector<bool> positiveVar(static_cast<std::size_t>(maxVar + 1), false);
  std::vector<int> negatedUses(static_cast<std::size_t>(maxVar + 1), 0);
  for (const auto& lit : rule.body) {
    if (lit.negated) {
      ++negatedUses[static_cast<std::size_t>(lit.proteinVar)];
    } else {
      positiveVar[static_cast<std::size_t>(lit.proteinVar)] = true;
    }
  }
  for (int v = 0; v <= maxVar; ++v) {
    if (!positiveVar[static_cast<std::size_t>(v)] &&
        negatedUses[static_cast<std::size_t>(v)] > 1) {
      throw MalformedRuleError(
          "variable V" + std::to_string(v) +
          " is shared between negated literals but never bound by a "
          "positive one");
    }
  }

  const int d1c = kb.drugId(d1);
  const int d2c = kb.drugId(d2);
  std::vector<ResolvedLiteral> positives, negatives;
  for (const auto& lit : rule.body) {
    ResolvedLiteral r;
    r.predId = kb.predicateId(lit.predicate);
    r.drug = lit.drugVar == 0 ? d1c : d2c;
    r.var = lit.proteinVar;
    r.negated = lit.negated;
    if (lit.negated) {
      negatives.push_back(r);
    } else {
      if (r.predId < 0 || r.drug < 0) return 0;  // unsatisfiable literal
      positives.push_back(r);
    }
  }
  std::vector<int> assign(static_cast<std::size_t>(maxVar + 1), -1);
  return countRec(positives, negatives, 0, assign, positiveVar, kb);
}

std::vector<double> relationalEmbed(const RuleSet& rules,
                                    const PairExample& pair,
                                    const KnowledgeBase& kb) {
  std::vector<double> out;
  out.reserve(rules.rules.size());
  for (const Rule& r : rules.rules) {
    out.push_back(
        static_cast<double>(countGroundings(r, pair.a, pair.b, kb)));
  }
  return out;
}

}  // namespace hetddi
