#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "civest/error.hpp"

namespace civest {

// Directed acyclic graph over named nodes with an observed/latent flag per
// node. Acyclicity is enforced on every edge insertion, so a Dag instance is
// a valid DAG at all times. Queries are const and safe to run concurrently.
class Dag {
 public:
  // Get-or-create by name. Names must match [A-Za-z_][A-Za-z0-9_]*.
  int add_node(const std::string& name, bool latent = false);
  void set_latent(const std::string& name, bool latent = true);
  // Throws GraphError on self-loops, duplicate edges, or edges that would
  // close a directed cycle. Nodes are created as needed.
  void add_edge(const std::string& parent, const std::string& child);

  bool has_node(const std::string& name) const;
  int index_of(const std::string& name) const;  // GraphError if unknown
  const std::string& name_of(int idx) const;
  bool is_latent(const std::string& name) const;
  bool has_edge(const std::string& parent, const std::string& child) const;

  int node_count() const { return static_cast<int>(names_.size()); }
  int edge_count() const { return edge_count_; }
  const std::vector<int>& parents(int idx) const { return parents_[idx]; }
  const std::vector<int>& children(int idx) const { return children_[idx]; }
  const std::vector<std::string>& node_names() const { return names_; }

  // Kahn's topological sort; throws GraphError if a cycle is present.
  std::vector<int> topological_order() const;

 private:
  bool reachable(int from, int to) const;

  std::vector<std::string> names_;
  std::vector<bool> latent_;
  std::vector<std::vector<int>> parents_;
  std::vector<std::vector<int>> children_;
  int edge_count_ = 0;
};

// Parses the edge-list format: one statement per line, `A -> B` declares an
// edge, `latent U` flags a node, `#` starts a comment. Errors carry the
// offending line number.
Dag parse_dag(const std::string& text);

// Transitive closure of children, excluding v itself.
std::set<std::string> descendants(const Dag& g, const std::string& v);

struct ActiveTrail {
  bool connected = false;
  // Active walk from a to b when connected (nodes may repeat with different
  // traversal directions); empty otherwise.
  std::vector<std::string> trail;
};

// Reachability over (node, direction) states with collider opening via
// ancestors of z; linear in graph size and yields a witness trail.
ActiveTrail find_active_trail(const Dag& g, const std::string& a,
                              const std::string& b, const std::set<std::string>& z);

bool d_separated(const Dag& g, const std::string& a, const std::string& b,
                 const std::set<std::string>& z);

// Copy of g without the single edge w -> y (the manipulated graph used by the
// instrument validity check). The edge must exist.
Dag remove_treatment_edge(const Dag& g, const std::string& w, const std::string& y);

struct CivVerdict {
  bool relevant = false;           // (i)  Q d-connected to W given Z
  bool exogenous_given_z = false;  // (ii) Q d-separated from Y given Z after removing W->Y
  bool z_clean = false;            // (iii) Z contains no descendant of Y
  bool valid = false;              // conjunction of the three
  std::optional<std::string> witness_relevance;            // set when (i) fails
  std::optional<std::vector<std::string>> witness_open_path;  // set when (ii) fails
  std::optional<std::string> witness_descendant;           // set when (iii) fails
};

// Checks whether q is a valid conditional instrument for the effect of w on y
// given conditioning set z. Preconditions (violations throw GraphError):
// q not in z; w and y distinct from q and outside z; edge w -> y present.
CivVerdict is_valid_civ(const Dag& g, const std::string& q,
                        const std::set<std::string>& z, const std::string& w,
                        const std::string& y);

// Collapses a set of nodes into one virtual node carrying the union of their
// external edges. Utility for treating a set-valued instrument as a single
// node; throws GraphError if the collapse would create a cycle.
Dag collapse_nodes(const Dag& g, const std::set<std::string>& group,
                   const std::string& new_name);

}  // namespace civest
