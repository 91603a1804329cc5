#include "civest/dag.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <map>
#include <sstream>

namespace civest {

namespace {

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

int Dag::add_node(const std::string& name, bool latent) {
  if (!valid_name(name)) {
    throw GraphError("invalid node name '" + name + "'");
  }
  for (int i = 0; i < node_count(); ++i) {
    if (names_[i] == name) {
      if (latent) latent_[i] = true;
      return i;
    }
  }
  names_.push_back(name);
  latent_.push_back(latent);
  parents_.emplace_back();
  children_.emplace_back();
  return node_count() - 1;
}

void Dag::set_latent(const std::string& name, bool latent) {
  latent_[static_cast<std::size_t>(index_of(name))] = latent;
}

bool Dag::reachable(int from, int to) const {
  if (from == to) return true;
  std::vector<bool> seen(names_.size(), false);
  std::deque<int> q{from};
  seen[static_cast<std::size_t>(from)] = true;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    for (int c : children_[static_cast<std::size_t>(u)]) {
      if (c == to) return true;
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = true;
        q.push_back(c);
      }
    }
  }
  return false;
}

void Dag::add_edge(const std::string& parent, const std::string& child) {
  if (parent == child) {
    throw GraphError("self-loop on node '" + parent + "'");
  }
  int p = add_node(parent);
  int c = add_node(child);
  const auto& kids = children_[static_cast<std::size_t>(p)];
  if (std::find(kids.begin(), kids.end(), c) != kids.end()) {
    throw GraphError("duplicate edge " + parent + " -> " + child);
  }
  if (reachable(c, p)) {
    throw GraphError("cycle detected: edge " + parent + " -> " + child +
                     " would close a directed cycle");
  }
  children_[static_cast<std::size_t>(p)].push_back(c);
  parents_[static_cast<std::size_t>(c)].push_back(p);
  ++edge_count_;
}

bool Dag::has_node(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

int Dag::index_of(const std::string& name) const {
  for (int i = 0; i < node_count(); ++i) {
    if (names_[static_cast<std::size_t>(i)] == name) return i;
  }
  throw GraphError("unknown node '" + name + "'");
}

const std::string& Dag::name_of(int idx) const {
  return names_.at(static_cast<std::size_t>(idx));
}

bool Dag::is_latent(const std::string& name) const {
  return latent_[static_cast<std::size_t>(index_of(name))];
}

bool Dag::has_edge(const std::string& parent, const std::string& child) const {
  int p = index_of(parent), c = index_of(child);
  const auto& kids = children_[static_cast<std::size_t>(p)];
  return std::find(kids.begin(), kids.end(), c) != kids.end();
}

std::vector<int> Dag::topological_order() const {
  std::vector<int> indeg(names_.size(), 0);
  for (int i = 0; i < node_count(); ++i) {
    indeg[static_cast<std::size_t>(i)] = static_cast<int>(parents_[static_cast<std::size_t>(i)].size());
  }
  std::deque<int> q;
  for (int i = 0; i < node_count(); ++i) {
    if (indeg[static_cast<std::size_t>(i)] == 0) q.push_back(i);
  }
  std::vector<int> order;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    order.push_back(u);
    for (int c : children_[static_cast<std::size_t>(u)]) {
      if (--indeg[static_cast<std::size_t>(c)] == 0) q.push_back(c);
    }
  }
  if (static_cast<int>(order.size()) != node_count()) {
    throw GraphError("cycle detected in topological sort");
  }
  return order;
}

Dag parse_dag(const std::string& text) {
  Dag g;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const std::size_t arrow = line.find("->");
    try {
      if (arrow != std::string::npos) {
        const std::string lhs = trim(line.substr(0, arrow));
        const std::string rhs = trim(line.substr(arrow + 2));
        if (!valid_name(lhs) || !valid_name(rhs)) {
          throw GraphError("expected 'NAME -> NAME'");
        }
        g.add_edge(lhs, rhs);
      } else if (line.rfind("latent", 0) == 0 &&
                 (line.size() == 6 || std::isspace(static_cast<unsigned char>(line[6])))) {
        const std::string name = trim(line.substr(6));
        if (!valid_name(name)) throw GraphError("expected 'latent NAME'");
        g.add_node(name, /*latent=*/true);
      } else {
        throw GraphError("unrecognized statement");
      }
    } catch (const GraphError& e) {
      throw GraphError("line " + std::to_string(line_no) + ": " + e.what() +
                       " (in '" + trim(raw) + "')");
    }
  }
  g.topological_order();  // invariant check
  return g;
}

std::set<std::string> descendants(const Dag& g, const std::string& v) {
  const int start = g.index_of(v);
  std::set<std::string> out;
  std::deque<int> q{start};
  std::vector<bool> seen(static_cast<std::size_t>(g.node_count()), false);
  seen[static_cast<std::size_t>(start)] = true;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    for (int c : g.children(u)) {
      if (!seen[static_cast<std::size_t>(c)]) {
        seen[static_cast<std::size_t>(c)] = true;
        out.insert(g.name_of(c));
        q.push_back(c);
      }
    }
  }
  out.erase(v);
  return out;
}

// State search over (node, arrival direction). "up" means the trail arrived
// from a child, "down" from a parent. A collider passes only when the node
// is in z or has a descendant in z, which is exactly membership in the
// ancestor closure of z.
ActiveTrail find_active_trail(const Dag& g, const std::string& a,
                              const std::string& b, const std::set<std::string>& z) {
  if (a == b) throw GraphError("d-separation query requires distinct endpoints");
  const int ia = g.index_of(a), ib = g.index_of(b);
  const int n = g.node_count();
  std::vector<bool> in_z(static_cast<std::size_t>(n), false);
  for (const std::string& name : z) {
    if (name == a || name == b) {
      throw GraphError("conditioning set must not contain endpoint '" + name + "'");
    }
    in_z[static_cast<std::size_t>(g.index_of(name))] = true;
  }

  // Ancestor closure of z (z itself included).
  std::vector<bool> anc_z(static_cast<std::size_t>(n), false);
  {
    std::deque<int> q;
    for (int i = 0; i < n; ++i) {
      if (in_z[static_cast<std::size_t>(i)]) {
        anc_z[static_cast<std::size_t>(i)] = true;
        q.push_back(i);
      }
    }
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int p : g.parents(u)) {
        if (!anc_z[static_cast<std::size_t>(p)]) {
          anc_z[static_cast<std::size_t>(p)] = true;
          q.push_back(p);
        }
      }
    }
  }

  constexpr int kUp = 0, kDown = 1;
  auto state = [n](int node, int dir) { return dir * n + node; };
  std::vector<bool> visited(static_cast<std::size_t>(2 * n), false);
  std::vector<int> pred(static_cast<std::size_t>(2 * n), -1);
  std::deque<int> queue;

  auto push = [&](int node, int dir, int from_state) {
    const int s = state(node, dir);
    if (visited[static_cast<std::size_t>(s)]) return;
    visited[static_cast<std::size_t>(s)] = true;
    pred[static_cast<std::size_t>(s)] = from_state;
    queue.push_back(s);
  };

  push(ia, kUp, -1);
  int hit_state = -1;
  while (!queue.empty() && hit_state < 0) {
    const int s = queue.front();
    queue.pop_front();
    const int node = s % n;
    const int dir = s / n;
    if (node == ib) {
      hit_state = s;
      break;
    }
    const bool observed = in_z[static_cast<std::size_t>(node)];
    if (dir == kUp && !observed) {
      for (int p : g.parents(node)) push(p, kUp, s);
      for (int c : g.children(node)) push(c, kDown, s);
    } else if (dir == kDown) {
      if (!observed) {
        for (int c : g.children(node)) push(c, kDown, s);
      }
      if (anc_z[static_cast<std::size_t>(node)]) {
        for (int p : g.parents(node)) push(p, kUp, s);
      }
    }
  }

  ActiveTrail result;
  if (hit_state < 0) return result;
  result.connected = true;
  for (int s = hit_state; s >= 0; s = pred[static_cast<std::size_t>(s)]) {
    result.trail.push_back(g.name_of(s % n));
  }
  std::reverse(result.trail.begin(), result.trail.end());
  return result;
}

bool d_separated(const Dag& g, const std::string& a, const std::string& b,
                 const std::set<std::string>& z) {
  return !find_active_trail(g, a, b, z).connected;
}

Dag remove_treatment_edge(const Dag& g, const std::string& w, const std::string& y) {
  if (!g.has_edge(w, y)) {
    throw GraphError("edge " + w + " -> " + y + " not present");
  }
  Dag out;
  for (const std::string& name : g.node_names()) {
    out.add_node(name, g.is_latent(name));
  }
  for (int p = 0; p < g.node_count(); ++p) {
    for (int c : g.children(p)) {
      const std::string& pn = g.name_of(p);
      const std::string& cn = g.name_of(c);
      if (pn == w && cn == y) continue;
      out.add_edge(pn, cn);
    }
  }
  return out;
}

CivVerdict is_valid_civ(const Dag& g, const std::string& q,
                        const std::set<std::string>& z, const std::string& w,
                        const std::string& y) {
  g.index_of(q);
  g.index_of(w);
  g.index_of(y);
  for (const std::string& name : z) g.index_of(name);
  if (z.count(q)) throw GraphError("instrument '" + q + "' must not be in the conditioning set");
  if (z.count(w) || z.count(y)) {
    throw GraphError("treatment/outcome must not be in the conditioning set");
  }
  if (q == w || q == y) throw GraphError("instrument must differ from treatment and outcome");
  if (!g.has_edge(w, y)) {
    throw GraphError("expected treatment edge " + w + " -> " + y);
  }

  CivVerdict v;

  const ActiveTrail relevance = find_active_trail(g, q, w, z);
  v.relevant = relevance.connected;
  if (!v.relevant) {
    v.witness_relevance = "no active path from " + q + " to " + w + " given the conditioning set";
  }

  const Dag manipulated = remove_treatment_edge(g, w, y);
  const ActiveTrail open = find_active_trail(manipulated, q, y, z);
  v.exogenous_given_z = !open.connected;
  if (open.connected) v.witness_open_path = open.trail;

  const std::set<std::string> desc_y = descendants(g, y);
  v.z_clean = true;
  for (const std::string& name : z) {
    if (desc_y.count(name)) {
      v.z_clean = false;
      v.witness_descendant = name;
      break;
    }
  }

  v.valid = v.relevant && v.exogenous_given_z && v.z_clean;
  return v;
}

Dag collapse_nodes(const Dag& g, const std::set<std::string>& group,
                   const std::string& new_name) {
  if (group.empty()) throw GraphError("collapse_nodes: empty group");
  for (const std::string& name : group) g.index_of(name);
  if (g.has_node(new_name) && !group.count(new_name)) {
    throw GraphError("collapse_nodes: name '" + new_name + "' already in use");
  }
  Dag out;
  bool all_latent = true;
  for (const std::string& name : group) all_latent = all_latent && g.is_latent(name);
  out.add_node(new_name, all_latent);
  for (const std::string& name : g.node_names()) {
    if (!group.count(name)) out.add_node(name, g.is_latent(name));
  }
  std::set<std::pair<std::string, std::string>> added;
  for (int p = 0; p < g.node_count(); ++p) {
    for (int c : g.children(p)) {
      std::string pn = g.name_of(p);
      std::string cn = g.name_of(c);
      if (group.count(pn)) pn = new_name;
      if (group.count(cn)) cn = new_name;
      if (pn == cn) continue;  // edge internal to the group
      if (added.insert({pn, cn}).second) out.add_edge(pn, cn);
    }
  }
  return out;
}

}  // namespace civest
