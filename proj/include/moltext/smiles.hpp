//
// Project MolText - Copyright 2026 MolText Developers.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "moltext/error.hpp"

namespace moltext {

struct SyntaxError: Error {
  using Error::Error;
};
struct UnsupportedElement: Error {
  using Error::Error;
};
struct ValenceViolation: Error {
  using Error::Error;
};
struct TooManyAtoms: Error {
  using Error::Error;
};
struct TypeOutOfVocabulary: Error {
  using Error::Error;
};

enum class Chirality { kNone, kCW, kCCW };

// Orders are kekulized at parse time; kAromatic never appears in a finished
// graph, only as a parser intermediate. The aromatic flag on Atom/Bond keeps
// the annotation for pattern matching.
enum class BondOrder : int { kSingle = 1, kDouble = 2, kTriple = 3 };

struct Atom {
  std::string element;
  int atomic_number = 0;
  Chirality chirality = Chirality::kNone;
  bool aromatic = false;
};

struct Bond {
  int i = 0;
  int j = 0;
  BondOrder order = BondOrder::kSingle;
  bool aromatic = false;
};

struct ElementInfo {
  const char *symbol;
  int atomic_number;
  int max_valence;
};

inline const std::array<ElementInfo, 9> &supported_elements() {
  static const std::array<ElementInfo, 9> kTable = {{
      {"C", 6, 4},
      {"N", 7, 3},
      {"O", 8, 2},
      {"F", 9, 1},
      {"P", 15, 5},
      {"S", 16, 6},
      {"Cl", 17, 1},
      {"Br", 35, 1},
      {"I", 53, 1},
  }};
  return kTable;
}

inline const ElementInfo *find_element(std::string_view symbol) {
  for (const ElementInfo &e: supported_elements())
    if (symbol == e.symbol)
      return &e;
  return nullptr;
}

/// Molecular graph: typed atoms plus typed undirected bonds. The unit of
/// parsing, augmentation, and encoding.
class MolGraph {
public:
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int num_atoms() const { return static_cast<int>(atoms.size()); }
  int num_bonds() const { return static_cast<int>(bonds.size()); }

  int add_atom(std::string element, Chirality chir = Chirality::kNone,
               bool aromatic = false) {
    const ElementInfo *info = find_element(element);
    if (info == nullptr)
      throw UnsupportedElement("unsupported element: " + element);
    atoms.push_back(Atom{std::move(element), info->atomic_number, chir,
                         aromatic});
    return num_atoms() - 1;
  }

  void add_bond(int i, int j, BondOrder order, bool aromatic = false) {
    bonds.push_back(Bond{i, j, order, aromatic});
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(atoms.size());
    for (std::size_t b = 0; b < bonds.size(); ++b) {
      adj[static_cast<std::size_t>(bonds[b].i)].push_back(static_cast<int>(b));
      adj[static_cast<std::size_t>(bonds[b].j)].push_back(static_cast<int>(b));
    }
    return adj;
  }

  int bond_order_sum(int atom) const {
    int total = 0;
    for (const Bond &b: bonds)
      if (b.i == atom || b.j == atom)
        total += static_cast<int>(b.order);
    return total;
  }

  int degree(int atom) const {
    int d = 0;
    for (const Bond &b: bonds)
      if (b.i == atom || b.j == atom)
        ++d;
    return d;
  }

  std::vector<int> component_of(int start) const {
    std::vector<char> seen(atoms.size(), 0);
    std::vector<int> queue{start}, out;
    seen[static_cast<std::size_t>(start)] = 1;
    while (!queue.empty()) {
      const int v = queue.back();
      queue.pop_back();
      out.push_back(v);
      for (const Bond &b: bonds) {
        const int other = b.i == v ? b.j : (b.j == v ? b.i : -1);
        if (other >= 0 && !seen[static_cast<std::size_t>(other)]) {
          seen[static_cast<std::size_t>(other)] = 1;
          queue.push_back(other);
        }
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  int num_components() const {
    std::vector<char> seen(atoms.size(), 0);
    int comps = 0;
    for (int s = 0; s < num_atoms(); ++s) {
      if (seen[static_cast<std::size_t>(s)])
        continue;
      ++comps;
      for (int v: component_of(s))
        seen[static_cast<std::size_t>(v)] = 1;
    }
    return comps;
  }

  bool is_connected() const {
    return num_atoms() <= 1 || num_components() == 1;
  }

  /// Cyclomatic ring count: bonds - atoms + components.
  int ring_count() const {
    if (atoms.empty())
      return 0;
    return num_bonds() - num_atoms() + num_components();
  }

  /// Subgraph induced by the given (sorted, distinct) atom indices; atom
  /// indices are compacted to 0..k-1.
  MolGraph induced_subgraph(const std::vector<int> &keep) const {
    std::vector<int> remap(atoms.size(), -1);
    MolGraph out;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      remap[static_cast<std::size_t>(keep[k])] = static_cast<int>(k);
      out.atoms.push_back(atoms[static_cast<std::size_t>(keep[k])]);
    }
    for (const Bond &b: bonds) {
      const int ni = remap[static_cast<std::size_t>(b.i)];
      const int nj = remap[static_cast<std::size_t>(b.j)];
      if (ni >= 0 && nj >= 0)
        out.bonds.push_back(Bond{ni, nj, b.order, b.aromatic});
    }
    return out;
  }

  /// Checks every structural invariant; throws on the first violation.
  void validate() const {
    std::set<std::pair<int, int>> pairs;
    for (const Bond &b: bonds) {
      if (b.i == b.j)
        throw ValenceViolation("self-loop bond on atom " +
                               std::to_string(b.i));
      if (b.i < 0 || b.j < 0 || b.i >= num_atoms() || b.j >= num_atoms())
        throw ValenceViolation("bond index out of range");
      const auto key = std::minmax(b.i, b.j);
      if (!pairs.insert(key).second)
        throw ValenceViolation("duplicate bond between " +
                               std::to_string(key.first) + " and " +
                               std::to_string(key.second));
    }
    for (int a = 0; a < num_atoms(); ++a) {
      const ElementInfo *info = find_element(atoms[static_cast<std::size_t>(a)].element);
      if (info == nullptr)
        throw UnsupportedElement("unsupported element: " +
                                 atoms[static_cast<std::size_t>(a)].element);
      if (bond_order_sum(a) > info->max_valence)
        throw ValenceViolation("valence of atom " + std::to_string(a) + " (" +
                               info->symbol + ") exceeds " +
                               std::to_string(info->max_valence));
    }
    // Aromatic annotations must sit on cycle bonds.
    for (std::size_t b = 0; b < bonds.size(); ++b) {
      if (!bonds[b].aromatic)
        continue;
      if (is_bridge(static_cast<int>(b)))
        throw ValenceViolation("aromatic bond outside a ring");
    }
  }

  bool is_bridge(int bond_index) const {
    const Bond &b = bonds[static_cast<std::size_t>(bond_index)];
    std::vector<char> seen(atoms.size(), 0);
    std::vector<int> queue{b.i};
    seen[static_cast<std::size_t>(b.i)] = 1;
    while (!queue.empty()) {
      const int v = queue.back();
      queue.pop_back();
      if (v == b.j)
        return false;
      for (std::size_t e = 0; e < bonds.size(); ++e) {
        if (static_cast<int>(e) == bond_index)
          continue;
        const Bond &eb = bonds[e];
        const int other = eb.i == v ? eb.j : (eb.j == v ? eb.i : -1);
        if (other >= 0 && !seen[static_cast<std::size_t>(other)]) {
          seen[static_cast<std::size_t>(other)] = 1;
          queue.push_back(other);
        }
      }
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

struct PendingBond {
  // 0 = unspecified, otherwise explicit order
  int order = 0;
  bool set = false;
};

struct RingOpen {
  int atom = -1;
  int explicit_order = 0;  // 0 = none given at the opening digit
};

inline bool kekulize_assign(const std::vector<int> &ar_bonds,
                            std::vector<Bond> &bonds,
                            std::vector<int> &double_count,
                            std::vector<int> &remaining,
                            const std::vector<int> &min_need,
                            const std::vector<int> &cap, std::size_t k) {
  if (k == ar_bonds.size())
    return true;
  const int bi = ar_bonds[k];
  Bond &b = bonds[static_cast<std::size_t>(bi)];
  const auto try_order = [&](BondOrder order) {
    const int add = order == BondOrder::kDouble ? 1 : 0;
    const std::size_t u = static_cast<std::size_t>(b.i);
    const std::size_t v = static_cast<std::size_t>(b.j);
    if (double_count[u] + add > cap[u] || double_count[v] + add > cap[v])
      return false;
    double_count[u] += add;
    double_count[v] += add;
    --remaining[u];
    --remaining[v];
    const bool u_ok = remaining[u] > 0 || double_count[u] >= min_need[u];
    const bool v_ok = remaining[v] > 0 || double_count[v] >= min_need[v];
    bool ok = false;
    if (u_ok && v_ok) {
      b.order = order;
      ok = kekulize_assign(ar_bonds, bonds, double_count, remaining, min_need,
                           cap, k + 1);
    }
    if (!ok) {
      double_count[u] -= add;
      double_count[v] -= add;
      ++remaining[u];
      ++remaining[v];
    }
    return ok;
  };
  return try_order(BondOrder::kDouble) || try_order(BondOrder::kSingle);
}

}  // namespace detail

/// Parses the supported SMILES subset: organic-subset atoms, ring digits
/// 1-9, branches, bond symbols - = #, lowercase aromatic ring atoms, and '.'
/// separated components. Aromatic rings are kekulized; the aromatic flag is
/// kept as an annotation. Bracket atoms, charges, and isotopes are rejected.
inline MolGraph parse_smiles(const std::string &text) {
  if (text.empty())
    throw SyntaxError("empty SMILES string");

  MolGraph g;
  std::vector<int> branch_stack;
  std::map<char, detail::RingOpen> open_rings;
  // -1 marks "no previous atom" (start of string or after '.')
  int prev = -1;
  int pending = 0;  // explicit bond order for the next atom/ring digit
  bool pending_set = false;

  std::size_t pos = 0;
  const auto fail = [&](const std::string &msg) {
    throw SyntaxError(msg + " at position " + std::to_string(pos) + " in '" +
                      text + "'");
  };

  const auto add_parsed_bond = [&](int a, int b, int explicit_order) {
    const bool both_aromatic = g.atoms[static_cast<std::size_t>(a)].aromatic &&
                               g.atoms[static_cast<std::size_t>(b)].aromatic;
    if (explicit_order != 0) {
      g.add_bond(a, b, static_cast<BondOrder>(explicit_order), false);
    } else if (both_aromatic) {
      // placeholder order; fixed by kekulization below
      g.add_bond(a, b, BondOrder::kSingle, true);
    } else {
      g.add_bond(a, b, BondOrder::kSingle, false);
    }
  };

  while (pos < text.size()) {
    const char c = text[pos];
    if (c == '[')
      throw UnsupportedElement(
          "bracket atoms (charges, isotopes, explicit H) are not supported");
    if (c == '-' || c == '=' || c == '#') {
      if (pending_set)
        fail("two bond symbols in a row");
      pending = c == '-' ? 1 : (c == '=' ? 2 : 3);
      pending_set = true;
      ++pos;
      continue;
    }
    if (c == '(') {
      if (prev < 0)
        fail("branch before any atom");
      if (pending_set)
        fail("bond symbol before '('");
      branch_stack.push_back(prev);
      ++pos;
      continue;
    }
    if (c == ')') {
      if (branch_stack.empty())
        fail("unbalanced ')'");
      if (pending_set)
        fail("dangling bond symbol before ')'");
      prev = branch_stack.back();
      branch_stack.pop_back();
      ++pos;
      continue;
    }
    if (c == '.') {
      if (pending_set)
        fail("bond symbol before '.'");
      prev = -1;
      ++pos;
      continue;
    }
    if (c >= '1' && c <= '9') {
      if (prev < 0)
        fail("ring digit before any atom");
      auto it = open_rings.find(c);
      if (it == open_rings.end()) {
        open_rings[c] = detail::RingOpen{prev, pending_set ? pending : 0};
      } else {
        const detail::RingOpen open = it->second;
        open_rings.erase(it);
        if (open.atom == prev)
          fail("ring bond to the same atom");
        int order = 0;
        if (open.explicit_order != 0 && pending_set &&
            open.explicit_order != pending)
          fail("conflicting ring-closure bond orders");
        order = open.explicit_order != 0 ? open.explicit_order
                                         : (pending_set ? pending : 0);
        add_parsed_bond(open.atom, prev, order);
      }
      pending = 0;
      pending_set = false;
      ++pos;
      continue;
    }
    if (std::isupper(static_cast<unsigned char>(c))) {
      // Two-letter symbols first (Cl, Br).
      std::string sym(1, c);
      if (pos + 1 < text.size() &&
          std::islower(static_cast<unsigned char>(text[pos + 1]))) {
        const std::string two = sym + text[pos + 1];
        if (find_element(two) != nullptr) {
          sym = two;
        }
      }
      if (find_element(sym) == nullptr)
        throw UnsupportedElement("unsupported element: " + sym);
      const int atom = g.add_atom(sym);
      if (prev >= 0)
        add_parsed_bond(prev, atom, pending_set ? pending : 0);
      prev = atom;
      pending = 0;
      pending_set = false;
      pos += sym.size();
      continue;
    }
    if (std::islower(static_cast<unsigned char>(c))) {
      static const std::string kAromaticOk = "cnos";
      if (kAromaticOk.find(c) == std::string::npos)
        throw UnsupportedElement(std::string("unsupported aromatic atom: ") +
                                 c);
      std::string sym(1, static_cast<char>(std::toupper(
                             static_cast<unsigned char>(c))));
      const int atom = g.add_atom(sym, Chirality::kNone, true);
      if (prev >= 0)
        add_parsed_bond(prev, atom, pending_set ? pending : 0);
      prev = atom;
      pending = 0;
      pending_set = false;
      ++pos;
      continue;
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  if (!branch_stack.empty())
    throw SyntaxError("unbalanced '(' in '" + text + "'");
  if (!open_rings.empty())
    throw SyntaxError("unmatched ring digit in '" + text + "'");
  if (pending_set)
    throw SyntaxError("dangling bond symbol at end of '" + text + "'");

  // Kekulize: every aromatic bond must lie on an aromatic cycle, then bond
  // orders are chosen so each aromatic C gets exactly one double bond,
  // aromatic N at most one, aromatic O/S none.
  std::vector<int> ar_bonds;
  for (std::size_t b = 0; b < g.bonds.size(); ++b)
    if (g.bonds[b].aromatic)
      ar_bonds.push_back(static_cast<int>(b));
  if (!ar_bonds.empty()) {
    // bridge test within the aromatic-bond subgraph
    for (int bi: ar_bonds) {
      const Bond &b = g.bonds[static_cast<std::size_t>(bi)];
      std::vector<char> seen(g.atoms.size(), 0);
      std::vector<int> queue{b.i};
      seen[static_cast<std::size_t>(b.i)] = 1;
      bool reached = false;
      while (!queue.empty() && !reached) {
        const int v = queue.back();
        queue.pop_back();
        for (int ei: ar_bonds) {
          if (ei == bi)
            continue;
          const Bond &eb = g.bonds[static_cast<std::size_t>(ei)];
          const int other = eb.i == v ? eb.j : (eb.j == v ? eb.i : -1);
          if (other < 0 || seen[static_cast<std::size_t>(other)])
            continue;
          if (other == b.j) {
            reached = true;
            break;
          }
          seen[static_cast<std::size_t>(other)] = 1;
          queue.push_back(other);
        }
      }
      if (!reached)
        throw SyntaxError("aromatic bond outside a ring in '" + text + "'");
    }

    std::vector<int> min_need(g.atoms.size(), 0), cap(g.atoms.size(), 0),
        remaining(g.atoms.size(), 0), dbl(g.atoms.size(), 0);
    for (std::size_t a = 0; a < g.atoms.size(); ++a) {
      if (!g.atoms[a].aromatic)
        continue;
      const std::string &el = g.atoms[a].element;
      if (el == "C") {
        min_need[a] = 1;
        cap[a] = 1;
      } else if (el == "N") {
        min_need[a] = 0;
        cap[a] = 1;
      } else {  // O, S
        min_need[a] = 0;
        cap[a] = 0;
      }
    }
    for (int bi: ar_bonds) {
      ++remaining[static_cast<std::size_t>(g.bonds[static_cast<std::size_t>(bi)].i)];
      ++remaining[static_cast<std::size_t>(g.bonds[static_cast<std::size_t>(bi)].j)];
    }
    if (!detail::kekulize_assign(ar_bonds, g.bonds, dbl, remaining, min_need,
                                 cap, 0))
      throw SyntaxError("cannot kekulize aromatic system in '" + text + "'");
  }

  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

namespace detail {

inline const char *bond_symbol(BondOrder order) {
  switch (order) {
  case BondOrder::kDouble:
    return "=";
  case BondOrder::kTriple:
    return "#";
  default:
    return "";
  }
}

}  // namespace detail

/// Serializes a molecular graph back to SMILES (kekulized, uppercase atoms).
/// Disconnected components are joined with '.'. Round trip through
/// parse_smiles yields an isomorphic graph.
inline std::string write_smiles(const MolGraph &g) {
  if (g.atoms.empty())
    return "";

  const int n = g.num_atoms();
  std::vector<std::vector<std::pair<int, int>>> adj(
      static_cast<std::size_t>(n));  // (neighbor, bond index)
  for (std::size_t b = 0; b < g.bonds.size(); ++b) {
    adj[static_cast<std::size_t>(g.bonds[b].i)].emplace_back(
        g.bonds[b].j, static_cast<int>(b));
    adj[static_cast<std::size_t>(g.bonds[b].j)].emplace_back(
        g.bonds[b].i, static_cast<int>(b));
  }
  for (auto &list: adj)
    std::sort(list.begin(), list.end());

  // Classify tree vs ring-closure bonds with a DFS.
  std::vector<char> atom_seen(static_cast<std::size_t>(n), 0);
  std::vector<char> bond_used(g.bonds.size(), 0);
  std::vector<std::vector<int>> closures(static_cast<std::size_t>(n));
  std::vector<std::vector<std::pair<int, int>>> children(
      static_cast<std::size_t>(n));  // (child atom, bond index)

  std::vector<int> roots;
  for (int s = 0; s < n; ++s) {
    if (atom_seen[static_cast<std::size_t>(s)])
      continue;
    roots.push_back(s);
    std::vector<int> stack{s};
    atom_seen[static_cast<std::size_t>(s)] = 1;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const auto &[u, bi]: adj[static_cast<std::size_t>(v)]) {
        if (bond_used[static_cast<std::size_t>(bi)])
          continue;
        bond_used[static_cast<std::size_t>(bi)] = 1;
        if (!atom_seen[static_cast<std::size_t>(u)]) {
          atom_seen[static_cast<std::size_t>(u)] = 1;
          children[static_cast<std::size_t>(v)].emplace_back(u, bi);
          stack.push_back(u);
        } else {
          closures[static_cast<std::size_t>(v)].push_back(bi);
        }
      }
    }
  }

  // Assign ring-closure digits on the fly during emission.
  std::string out;
  std::map<int, char> open_digit;  // bond index -> digit
  std::vector<char> free_digits;
  for (char d = '9'; d >= '1'; --d)
    free_digits.push_back(d);

  struct Frame {
    int atom;
    int via_bond;  // -1 for root
    std::size_t child = 0;
    bool opened_paren = false;
  };

  const auto emit_atom = [&](int v) {
    out += g.atoms[static_cast<std::size_t>(v)].element;
    for (int bi: closures[static_cast<std::size_t>(v)]) {
      auto it = open_digit.find(bi);
      if (it == open_digit.end()) {
        if (free_digits.empty())
          throw Error("write_smiles: more than 9 simultaneously open rings");
        const char d = free_digits.back();
        free_digits.pop_back();
        open_digit[bi] = d;
        out += detail::bond_symbol(g.bonds[static_cast<std::size_t>(bi)].order);
        out += d;
      } else {
        const char d = it->second;
        open_digit.erase(it);
        free_digits.push_back(d);
        out += d;
      }
    }
  };

  bool first_component = true;
  for (int root: roots) {
    if (!first_component)
      out += '.';
    first_component = false;

    std::vector<Frame> stack;
    stack.push_back(Frame{root, -1});
    emit_atom(root);
    while (!stack.empty()) {
      Frame &f = stack.back();
      auto &kids = children[static_cast<std::size_t>(f.atom)];
      if (f.child >= kids.size()) {
        if (f.opened_paren)
          out += ')';
        stack.pop_back();
        continue;
      }
      const auto [child, bi] = kids[f.child];
      const bool last = f.child + 1 == kids.size();
      ++f.child;
      bool opened = false;
      if (!last) {
        out += '(';
        opened = true;
      }
      out += detail::bond_symbol(g.bonds[static_cast<std::size_t>(bi)].order);
      emit_atom(child);
      stack.push_back(Frame{child, bi, 0, opened});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical form and isomorphism
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> refine_labels(const MolGraph &g,
                                      std::vector<int> labels) {
  const int n = g.num_atoms();
  std::vector<std::vector<std::pair<int, int>>> neigh(
      static_cast<std::size_t>(n));  // (bond order, neighbor)
  for (const Bond &b: g.bonds) {
    neigh[static_cast<std::size_t>(b.i)].emplace_back(
        static_cast<int>(b.order), b.j);
    neigh[static_cast<std::size_t>(b.j)].emplace_back(
        static_cast<int>(b.order), b.i);
  }
  for (int round = 0; round < n; ++round) {
    std::vector<std::vector<int>> keys(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      std::vector<int> key{labels[static_cast<std::size_t>(v)]};
      std::vector<std::pair<int, int>> ns;
      for (const auto &[order, u]: neigh[static_cast<std::size_t>(v)])
        ns.emplace_back(order, labels[static_cast<std::size_t>(u)]);
      std::sort(ns.begin(), ns.end());
      for (const auto &[order, lab]: ns) {
        key.push_back(order);
        key.push_back(lab);
      }
      keys[static_cast<std::size_t>(v)] = std::move(key);
    }
    std::vector<std::vector<int>> sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> next(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v)
      next[static_cast<std::size_t>(v)] = static_cast<int>(
          std::lower_bound(sorted.begin(), sorted.end(),
                           keys[static_cast<std::size_t>(v)]) -
          sorted.begin());
    if (next == labels)
      break;
    labels = std::move(next);
  }
  return labels;
}

inline std::string serialize_with_order(const MolGraph &g,
                                        const std::vector<int> &position) {
  // position[v] = canonical index of atom v
  const int n = g.num_atoms();
  std::vector<int> atom_at(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v)
    atom_at[static_cast<std::size_t>(position[static_cast<std::size_t>(v)])] =
        v;
  std::string out;
  for (int p = 0; p < n; ++p) {
    const Atom &a = g.atoms[static_cast<std::size_t>(atom_at[static_cast<std::size_t>(p)])];
    out += a.element;
    out += static_cast<char>('0' + static_cast<int>(a.chirality));
    out += '|';
  }
  std::vector<std::array<int, 3>> edges;
  for (const Bond &b: g.bonds) {
    int pi = position[static_cast<std::size_t>(b.i)];
    int pj = position[static_cast<std::size_t>(b.j)];
    if (pi > pj)
      std::swap(pi, pj);
    edges.push_back({pi, pj, static_cast<int>(b.order)});
  }
  std::sort(edges.begin(), edges.end());
  for (const auto &[i, j, o]: edges) {
    out += std::to_string(i) + "," + std::to_string(j) + "," +
           std::to_string(o) + ";";
  }
  return out;
}

inline void canonical_search(const MolGraph &g, std::vector<int> labels,
                             std::string &best, bool &have_best, int depth) {
  const int n = g.num_atoms();
  labels = refine_labels(g, std::move(labels));

  // Find the smallest non-singleton label class.
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (int v = 0; v < n; ++v)
    ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(v)])];
  int target = -1;
  for (int lab = 0; lab < n; ++lab) {
    if (count[static_cast<std::size_t>(lab)] > 1) {
      target = lab;
      break;
    }
  }

  if (target < 0) {
    // discrete partition: labels are a permutation 0..n-1
    const std::string s = serialize_with_order(g, labels);
    if (!have_best || s < best) {
      best = s;
      have_best = true;
    }
    return;
  }

  // Individualize each member of the tied class; depth bound keeps the
  // search exact yet finite for the molecule sizes this library handles.
  for (int v = 0; v < n; ++v) {
    if (labels[static_cast<std::size_t>(v)] != target)
      continue;
    std::vector<int> split = labels;
    for (int u = 0; u < n; ++u)
      if (split[static_cast<std::size_t>(u)] > target ||
          (split[static_cast<std::size_t>(u)] == target && u != v))
        ++split[static_cast<std::size_t>(u)];
    // v keeps label `target`, peers shift up by one
    canonical_search(g, std::move(split), best, have_best, depth + 1);
  }
}

}  // namespace detail

/// Canonical string form: Morgan-style iterative refinement with
/// individualization on ties, then a lexicographically minimal
/// serialization. Exact for the sizes this library works with.
inline std::string canonical_form(const MolGraph &g) {
  const int n = g.num_atoms();
  if (n == 0)
    return "";
  // initial label: (element, chirality, degree)
  std::vector<std::vector<int>> keys(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    const Atom &a = g.atoms[static_cast<std::size_t>(v)];
    keys[static_cast<std::size_t>(v)] = {a.atomic_number,
                                         static_cast<int>(a.chirality),
                                         g.degree(v)};
  }
  std::vector<std::vector<int>> sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v)
    labels[static_cast<std::size_t>(v)] = static_cast<int>(
        std::lower_bound(sorted.begin(), sorted.end(),
                         keys[static_cast<std::size_t>(v)]) -
        sorted.begin());

  std::string best;
  bool have_best = false;
  detail::canonical_search(g, std::move(labels), best, have_best, 0);
  return best;
}

inline bool is_isomorphic(const MolGraph &a, const MolGraph &b) {
  if (a.num_atoms() != b.num_atoms() || a.num_bonds() != b.num_bonds())
    return false;
  return canonical_form(a) == canonical_form(b);
}

// ---------------------------------------------------------------------------
// Dense tensor form
// ---------------------------------------------------------------------------

struct DenseDims {
  int n_max = 12;
  int c_a = 5;  // atom types incl. trailing pad slot
  int c_b = 4;  // bond types incl. trailing no-bond slot

  int pad_type() const { return c_a - 1; }
  int no_bond_type() const { return c_b - 1; }
  int v_size() const { return n_max * c_a; }
  int e_size() const { return n_max * n_max * c_b; }
};

/// Index of an element in the dense atom vocabulary, or -1 when the element
/// does not fit the first c_a-1 slots.
inline int atom_type_index(const std::string &element, int c_a) {
  const auto &table = supported_elements();
  for (int k = 0; k < c_a - 1 && k < static_cast<int>(table.size()); ++k)
    if (element == table[static_cast<std::size_t>(k)].symbol)
      return k;
  return -1;
}

inline const char *atom_type_symbol(int index) {
  return supported_elements()[static_cast<std::size_t>(index)].symbol;
}

/// Fixed-size one-hot atom matrix and bond tensor. V is n_max x c_a row
/// one-hot; E is n_max x n_max x c_b, symmetric over the first two indices
/// with a no-bond diagonal.
struct DenseMol {
  DenseDims dims;
  std::vector<double> v;  // n_max * c_a
  std::vector<double> e;  // n_max * n_max * c_b

  double &at_v(int atom, int type) {
    return v[static_cast<std::size_t>(atom * dims.c_a + type)];
  }
  double at_v(int atom, int type) const {
    return v[static_cast<std::size_t>(atom * dims.c_a + type)];
  }
  double &at_e(int i, int j, int type) {
    return e[static_cast<std::size_t>((i * dims.n_max + j) * dims.c_b + type)];
  }
  double at_e(int i, int j, int type) const {
    return e[static_cast<std::size_t>((i * dims.n_max + j) * dims.c_b + type)];
  }

  void validate() const {
    for (int a = 0; a < dims.n_max; ++a) {
      int ones = 0;
      for (int t = 0; t < dims.c_a; ++t) {
        const double x = at_v(a, t);
        if (x != 0.0 && x != 1.0)
          throw TypeOutOfVocabulary("V row " + std::to_string(a) +
                                    " is not one-hot");
        ones += x == 1.0 ? 1 : 0;
      }
      if (ones != 1)
        throw TypeOutOfVocabulary("V row " + std::to_string(a) +
                                  " is not one-hot");
    }
    for (int i = 0; i < dims.n_max; ++i) {
      for (int t = 0; t < dims.c_b; ++t)
        if (at_e(i, i, t) != (t == dims.no_bond_type() ? 1.0 : 0.0))
          throw TypeOutOfVocabulary("E diagonal must be no-bond");
      for (int j = 0; j < dims.n_max; ++j) {
        int ones = 0;
        for (int t = 0; t < dims.c_b; ++t) {
          const double x = at_e(i, j, t);
          if (x != at_e(j, i, t))
            throw TypeOutOfVocabulary("E is not symmetric");
          if (x != 0.0 && x != 1.0)
            throw TypeOutOfVocabulary("E slot is not one-hot");
          ones += x == 1.0 ? 1 : 0;
        }
        if (ones != 1)
          throw TypeOutOfVocabulary("E slot is not one-hot");
      }
    }
  }
};

inline DenseMol to_dense(const MolGraph &g, const DenseDims &dims) {
  if (g.num_atoms() > dims.n_max)
    throw TooManyAtoms("molecule has " + std::to_string(g.num_atoms()) +
                       " atoms, n_max is " + std::to_string(dims.n_max));
  DenseMol d;
  d.dims = dims;
  d.v.assign(static_cast<std::size_t>(dims.v_size()), 0.0);
  d.e.assign(static_cast<std::size_t>(dims.e_size()), 0.0);
  for (int a = 0; a < dims.n_max; ++a) {
    if (a < g.num_atoms()) {
      const int t = atom_type_index(g.atoms[static_cast<std::size_t>(a)].element,
                                    dims.c_a);
      if (t < 0)
        throw TypeOutOfVocabulary("element " +
                                  g.atoms[static_cast<std::size_t>(a)].element +
                                  " does not fit an atom vocabulary of " +
                                  std::to_string(dims.c_a));
      d.at_v(a, t) = 1.0;
    } else {
      d.at_v(a, dims.pad_type()) = 1.0;
    }
  }
  for (int i = 0; i < dims.n_max; ++i)
    for (int j = 0; j < dims.n_max; ++j)
      d.at_e(i, j, dims.no_bond_type()) = 1.0;
  for (const Bond &b: g.bonds) {
    const int t = static_cast<int>(b.order) - 1;
    if (t >= dims.c_b - 1)
      throw TypeOutOfVocabulary("bond order does not fit a bond vocabulary of " +
                                std::to_string(dims.c_b));
    d.at_e(b.i, b.j, dims.no_bond_type()) = 0.0;
    d.at_e(b.j, b.i, dims.no_bond_type()) = 0.0;
    d.at_e(b.i, b.j, t) = 1.0;
    d.at_e(b.j, b.i, t) = 1.0;
  }
  return d;
}

/// Decodes a dense molecule: pad rows and their bonds are dropped, indices
/// compacted. The result is not validated; callers that need a guaranteed
/// valid molecule run validity correction.
inline MolGraph from_dense(const DenseMol &d) {
  const DenseDims &dims = d.dims;
  std::vector<int> keep;
  std::vector<int> remap(static_cast<std::size_t>(dims.n_max), -1);
  MolGraph g;
  for (int a = 0; a < dims.n_max; ++a) {
    int best = 0;
    for (int t = 1; t < dims.c_a; ++t)
      if (d.at_v(a, t) > d.at_v(a, best))
        best = t;
    if (best == dims.pad_type())
      continue;
    remap[static_cast<std::size_t>(a)] = g.add_atom(atom_type_symbol(best));
    keep.push_back(a);
  }
  for (std::size_t ki = 0; ki < keep.size(); ++ki) {
    for (std::size_t kj = ki + 1; kj < keep.size(); ++kj) {
      const int i = keep[ki], j = keep[kj];
      int best = 0;
      for (int t = 1; t < dims.c_b; ++t)
        if (d.at_e(i, j, t) > d.at_e(i, j, best))
          best = t;
      if (best == dims.no_bond_type())
        continue;
      g.add_bond(remap[static_cast<std::size_t>(i)],
                 remap[static_cast<std::size_t>(j)],
                 static_cast<BondOrder>(best + 1));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Functional groups
// ---------------------------------------------------------------------------

/// Labels used both by caption synthesis and by generation checks.
inline std::set<std::string> detect_functional_groups(const MolGraph &g) {
  std::set<std::string> out;
  const int n = g.num_atoms();

  const auto element = [&](int v) -> const std::string & {
    return g.atoms[static_cast<std::size_t>(v)].element;
  };

  std::vector<std::vector<std::pair<int, BondOrder>>> neigh(
      static_cast<std::size_t>(n));
  for (const Bond &b: g.bonds) {
    neigh[static_cast<std::size_t>(b.i)].emplace_back(b.j, b.order);
    neigh[static_cast<std::size_t>(b.j)].emplace_back(b.i, b.order);
  }

  const auto is_hydroxyl_oxygen = [&](int v) {
    return element(v) == "O" && neigh[static_cast<std::size_t>(v)].size() == 1 &&
           neigh[static_cast<std::size_t>(v)][0].second == BondOrder::kSingle;
  };
  const auto is_carbonyl_oxygen = [&](int v) {
    return element(v) == "O" && neigh[static_cast<std::size_t>(v)].size() == 1 &&
           neigh[static_cast<std::size_t>(v)][0].second == BondOrder::kDouble;
  };

  for (int v = 0; v < n; ++v) {
    const std::string &el = element(v);
    if (is_hydroxyl_oxygen(v))
      out.insert("hydroxyl");
    if (el == "F" || el == "Cl" || el == "Br" || el == "I")
      out.insert("halogen");
    if (el == "N" && !neigh[static_cast<std::size_t>(v)].empty()) {
      bool all_single = true;
      for (const auto &[u, order]: neigh[static_cast<std::size_t>(v)])
        all_single = all_single && order == BondOrder::kSingle;
      if (all_single)
        out.insert("amine");
    }
    if (el == "C") {
      bool has_carbonyl_o = false, has_hydroxyl_o = false;
      for (const auto &[u, order]: neigh[static_cast<std::size_t>(v)]) {
        if (order == BondOrder::kDouble && is_carbonyl_oxygen(u))
          has_carbonyl_o = true;
        if (order == BondOrder::kSingle && is_hydroxyl_oxygen(u))
          has_hydroxyl_o = true;
      }
      if (has_carbonyl_o)
        out.insert("carbonyl");
      if (has_carbonyl_o && has_hydroxyl_o)
        out.insert("carboxyl");
    }
  }

  for (const Bond &b: g.bonds)
    if (b.order == BondOrder::kDouble && element(b.i) == "C" &&
        element(b.j) == "C")
      out.insert("double_bond");

  // benzene: a six-cycle of carbons with alternating single/double bonds
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  std::map<std::pair<int, int>, BondOrder> order_of;
  for (const Bond &b: g.bonds) {
    adj[static_cast<std::size_t>(b.i)].push_back(b.j);
    adj[static_cast<std::size_t>(b.j)].push_back(b.i);
    order_of[std::minmax(b.i, b.j)] = b.order;
  }
  const auto cycle_is_benzene = [&](const std::vector<int> &cyc) {
    for (int v: cyc)
      if (element(v) != "C")
        return false;
    std::vector<int> orders;
    for (std::size_t k = 0; k < 6; ++k) {
      const auto key = std::minmax(cyc[k], cyc[(k + 1) % 6]);
      const BondOrder o = order_of[key];
      if (o == BondOrder::kTriple)
        return false;
      orders.push_back(static_cast<int>(o));
    }
    for (std::size_t k = 0; k < 6; ++k)
      if (orders[k] == orders[(k + 1) % 6])
        return false;
    return true;
  };

  bool benzene = false;
  std::vector<int> path;
  const std::function<void(int, int)> dfs6 = [&](int start, int v) {
    if (benzene)
      return;
    path.push_back(v);
    if (path.size() == 6) {
      const auto &back = adj[static_cast<std::size_t>(v)];
      if (std::find(back.begin(), back.end(), start) != back.end() &&
          path[1] < path[5] && cycle_is_benzene(path))
        benzene = true;
      path.pop_back();
      return;
    }
    for (int u: adj[static_cast<std::size_t>(v)]) {
      if (u <= start || std::find(path.begin(), path.end(), u) != path.end())
        continue;
      dfs6(start, u);
      if (benzene)
        break;
    }
    path.pop_back();
  };
  for (int s = 0; s < n && !benzene; ++s) {
    path.clear();
    dfs6(s, s);
  }
  if (benzene)
    out.insert("benzene_ring");

  return out;
}

}  // namespace moltext
