#include "hepi/graph.hpp"

#include <algorithm>
#include <sstream>

namespace hepi {

EdgeList build_knn_edges(const std::vector<Vec3>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  if (n < 2) throw NumericsError("knn edges: need at least 2 points");
  if (k < 1 || k > n - 1) throw NumericsError("knn edges: k out of range");
  EdgeList edges;
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((pts[j] - pts[i]).norm2(), j);
    }
    std::sort(cand.begin(), cand.end());  // distance, then lower index
    for (int t = 0; t < k; ++t) edges.emplace_back(cand[t].second, i);
  }
  // symmetrize + dedupe
  const size_t m = edges.size();
  for (size_t e = 0; e < m; ++e) edges.emplace_back(edges[e].second, edges[e].first);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

EdgeList build_bipartite_complete(int n_src, int n_dst) {
  if (n_src < 1 || n_dst < 1)
    throw NumericsError("bipartite edges: both sides must be non-empty");
  EdgeList edges;
  edges.reserve(static_cast<size_t>(n_src) * n_dst);
  for (int s = 0; s < n_src; ++s)
    for (int d = 0; d < n_dst; ++d) edges.emplace_back(s, d);
  return edges;
}

EdgeList build_complete_edges(int n) {
  EdgeList edges;
  for (int s = 0; s < n; ++s)
    for (int d = 0; d < n; ++d)
      if (s != d) edges.emplace_back(s, d);
  return edges;
}

void inject_noise(HeteroGeoGraph& g, double pos_sigma, double vel_sigma, Rng& rng) {
  if (pos_sigma < 0.0 || vel_sigma < 0.0)
    throw NumericsError("inject_noise: negative sigma");
  if (pos_sigma == 0.0 && vel_sigma == 0.0) return;
  for (auto& p : g.obj.pos) {
    p.x += pos_sigma * rng.normal();
    p.y += pos_sigma * rng.normal();
    p.z += pos_sigma * rng.normal();
  }
  for (auto& v : g.obj.vel) {
    v.x += vel_sigma * rng.normal();
    v.y += vel_sigma * rng.normal();
    v.z += vel_sigma * rng.normal();
  }
}

namespace {

Tensor pad_cols(const Tensor& t, int64_t width) {
  if (t.cols() == width) return t;
  Tensor out(t.rows(), width);
  for (int64_t i = 0; i < t.rows(); ++i)
    for (int64_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(i, j);
  return out;
}

}  // namespace

Tensor vec3_tensor(const std::vector<Vec3>& v) {
  Tensor t(static_cast<int64_t>(v.size()), 3);
  for (size_t i = 0; i < v.size(); ++i) {
    t.at(i, 0) = v[i].x;
    t.at(i, 1) = v[i].y;
    t.at(i, 2) = v[i].z;
  }
  return t;
}

GraphBatch batch_graphs(const std::vector<HeteroGeoGraph>& graphs) {
  GraphBatch b;
  b.n_graphs = static_cast<int>(graphs.size());
  if (graphs.empty()) return b;

  const size_t n_obj_vec = graphs[0].obj.vectors.size();
  const size_t n_act_vec = graphs[0].act.vectors.size();
  std::vector<std::vector<Tensor>> obj_vec_parts(n_obj_vec), act_vec_parts(n_act_vec);
  std::vector<Tensor> obj_scal_parts, act_scal_parts;

  int obj_off = 0, act_off = 0;
  for (int gi = 0; gi < b.n_graphs; ++gi) {
    const auto& g = graphs[gi];
    if (g.obj.vectors.size() != n_obj_vec || g.act.vectors.size() != n_act_vec)
      throw NumericsError("batch_graphs: inconsistent vector attributes");
    for (const auto& p : g.obj.pos) b.obj_pos.push_back(p);
    for (const auto& p : g.act.pos) b.act_pos.push_back(p);
    for (int i = 0; i < g.obj.n(); ++i) b.obj_graph.push_back(gi);
    for (int i = 0; i < g.act.n(); ++i) b.act_graph.push_back(gi);
    obj_scal_parts.push_back(g.obj.scalars);
    act_scal_parts.push_back(g.act.scalars);
    for (size_t v = 0; v < n_obj_vec; ++v)
      obj_vec_parts[v].push_back(g.obj.vectors[v].second);
    for (size_t v = 0; v < n_act_vec; ++v)
      act_vec_parts[v].push_back(g.act.vectors[v].second);
    for (auto [s, d] : g.e_oo) b.e_oo.emplace_back(s + obj_off, d + obj_off);
    for (auto [s, d] : g.e_aa) b.e_aa.emplace_back(s + act_off, d + act_off);
    for (auto [s, d] : g.e_oa) b.e_oa.emplace_back(s + obj_off, d + act_off);
    obj_off += g.obj.n();
    act_off += g.act.n();
  }
  b.obj_scalars = vcat(obj_scal_parts);
  b.act_scalars = vcat(act_scal_parts);
  for (auto& parts : obj_vec_parts) b.obj_vectors.push_back(vcat(parts));
  for (auto& parts : act_vec_parts) b.act_vectors.push_back(vcat(parts));

  // Union view: objects first, actuators appended; scalars padded to the wider
  // set, vector attrs joined by name with zeros where a set lacks the attr.
  const int n_obj = b.n_obj(), n_act = b.n_act();
  const int64_t sw = std::max(b.obj_scalars.cols(), b.act_scalars.cols());
  b.uni_scalars = vcat({pad_cols(b.obj_scalars, sw), pad_cols(b.act_scalars, sw)});
  std::vector<std::string> names;
  for (const auto& [name, _] : graphs[0].obj.vectors) names.push_back(name);
  for (const auto& [name, _] : graphs[0].act.vectors)
    if (std::find(names.begin(), names.end(), name) == names.end())
      names.push_back(name);
  for (const auto& name : names) {
    Tensor top = Tensor::zeros(n_obj, 3), bot = Tensor::zeros(n_act, 3);
    for (size_t v = 0; v < n_obj_vec; ++v)
      if (graphs[0].obj.vectors[v].first == name) top = b.obj_vectors[v];
    for (size_t v = 0; v < n_act_vec; ++v)
      if (graphs[0].act.vectors[v].first == name) bot = b.act_vectors[v];
    b.uni_vectors.push_back(vcat({top, bot}));
  }
  b.uni_pos = b.obj_pos;
  b.uni_pos.insert(b.uni_pos.end(), b.act_pos.begin(), b.act_pos.end());
  for (auto [s, d] : b.e_oo) b.e_uni.emplace_back(s, d);
  for (auto [s, d] : b.e_aa) b.e_uni.emplace_back(s + n_obj, d + n_obj);
  for (auto [s, d] : b.e_oa) b.e_uni.emplace_back(s, d + n_obj);
  for (int i = 0; i < n_act; ++i) b.act_row_in_uni.push_back(n_obj + i);
  return b;
}

std::string dump_graph(const HeteroGeoGraph& g) {
  std::ostringstream os;
  auto nodes = [&](const char* tag, const NodeSet& s) {
    for (int i = 0; i < s.n(); ++i) {
      os << tag << ' ' << i << " pos " << s.pos[i].x << ' ' << s.pos[i].y << ' '
         << s.pos[i].z << " vel " << s.vel[i].x << ' ' << s.vel[i].y << ' '
         << s.vel[i].z;
      os << " scalars";
      for (int64_t j = 0; j < s.scalars.cols(); ++j) os << ' ' << s.scalars.at(i, j);
      os << '\n';
    }
  };
  nodes("obj", g.obj);
  nodes("act", g.act);
  auto edges = [&](const char* tag, const EdgeList& e) {
    for (auto [s, d] : e) os << tag << ' ' << s << ' ' << d << '\n';
  };
  edges("edge_oo", g.e_oo);
  edges("edge_aa", g.e_aa);
  edges("edge_oa", g.e_oa);
  return os.str();
}

}  // namespace hepi
