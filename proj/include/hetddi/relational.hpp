#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hetddi/error.hpp"
#include "hetddi/pair.hpp"

namespace hetddi {

/// Ground facts Predicate(drug, protein) with interned constants. Immutable
/// once populated; grounding queries are pure.
class KnowledgeBase {
 public:
  /// Returns false (and counts a duplicate) when the fact is already known.
  bool addFact(const std::string& predicate, const std::string& drug,
               const std::string& protein);

  int predicateId(const std::string& name) const;  // -1 when unknown
  int drugId(const std::string& name) const;
  int proteinId(const std::string& name) const;

  std::size_t factCount() const { return facts_.size(); }
  std::size_t predicateCount() const { return predicateNames_.size(); }
  std::size_t drugCount() const { return drugNames_.size(); }
  std::size_t proteinCount() const { return proteinNames_.size(); }
  int duplicatesDropped() const { return duplicates_; }

  const std::vector<std::string>& predicateNames() const {
    return predicateNames_;
  }

  bool hasFact(int predicate, int drug, int protein) const;

  /// Proteins p with predicate(drug, p), in fact insertion order.
  const std::vector<int>& proteinsFor(int predicate, int drug) const;

 private:
  static std::uint64_t key(int predicate, int drug, int protein);

  std::unordered_map<std::string, int> predicateIds_, drugIds_, proteinIds_;
  std::vector<std::string> predicateNames_, drugNames_, proteinNames_;
  std::unordered_set<std::uint64_t> facts_;
  std::unordered_map<std::uint64_t, std::vector<int>> byPredDrug_;
  int duplicates_ = 0;
};

/// Parses `Predicate("drug","protein").` lines; '%' starts a comment.
/// Errors carry line/column positions. Duplicate facts are dropped and
/// counted on the returned knowledge base.
KnowledgeBase parseFacts(const std::string& text);
KnowledgeBase readFactsFile(const std::string& path);

/// One body literal: predicate(drugVar, Vn) or its negation. drugVar 0/1
/// names D1/D2; proteinVar indexes path variables V0, V1, ...
struct RuleLiteral {
  std::string predicate;
  int drugVar = 0;
  int proteinVar = 0;
  bool negated = false;

  bool operator==(const RuleLiteral&) const = default;
};

/// A root-to-leaf clause: interacts(D1,D2) :- body. leafValue is the
/// regression value of the leaf the path ends in.
struct Rule {
  std::vector<RuleLiteral> body;
  double leafValue = 0.0;
};

struct RuleSet {
  std::vector<Rule> rules;
};

std::string ruleText(const Rule& rule);
std::string ruleSetText(const RuleSet& rules);
void writeRulesFile(const std::string& path, const RuleSet& rules);
/// Parses clauses back (leaf values are not part of the text and load as 0).
RuleSet parseRules(const std::string& text);
RuleSet readRulesFile(const std::string& path);

struct RrtConfig {
  int maxDepth = 5;
  int minExamples = 10;
};

/// Regression-tree node: either a leaf value or a positive split literal
/// with yes/no children.
struct RrtNode {
  bool isLeaf = true;
  double value = 0.0;
  RuleLiteral split;
  std::unique_ptr<RrtNode> yes, no;
};

struct RrtTree {
  std::unique_ptr<RrtNode> root;
};

/// Top-down induction over pair examples (label is the regression target).
/// Splits maximize weighted variance reduction of the targets; candidate
/// literals put a predicate on either drug with a reused or fresh protein
/// variable. Ties break lexicographically on (predicate, drug variable,
/// protein variable), so learning is deterministic.
RrtTree learnRrt(const std::vector<PairExample>& examples,
                 const KnowledgeBase& kb, const RrtConfig& cfg);

/// One rule per leaf, depth-first with the yes branch first. A no branch
/// contributes the negated split literal; fresh variables inside negations
/// get path-unique names so they stay local to their literal.
RuleSet extractRules(const RrtTree& tree);

/// Number of distinct assignments of the positively-introduced protein
/// variables satisfying every body literal, with the head bound to
/// (d1, d2). Negated literals filter: a variable of theirs bound by a
/// positive literal tests fact absence, a variable local to one negation
/// tests that no fact exists. An empty body counts 1. A variable shared by
/// negations only is a malformed rule.
std::int64_t countGroundings(const Rule& rule, const std::string& d1,
                             const std::string& d2, const KnowledgeBase& kb);

/// Component i = countGroundings(rules[i], pair). Length always |rules|.
std::vector<double> relationalEmbed(const RuleSet& rules,
                                    const PairExample& pair,
                                    const KnowledgeBase& kb);

}  // namespace hetddi
