#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "colliderlab/pipeline.hpp"
#include "colliderlab/rng.hpp"
#include "pipeline_io.hpp"

namespace colliderlab::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using detail::opt_double;

std::optional<SignaturePoint> SignatureRow::point() const {
  if (!bacs || !loocv_r2 || !ea || !mv || !mae) return std::nullopt;
  return SignaturePoint{*bacs, *loocv_r2, *ea, *mv, *mae};
}

std::vector<SignatureRow> signature_table(std::span<const JudgmentRecord> records,
                                          std::span<const CellFitRecord> fits) {
  const std::vector<JudgmentRecord> all(records.begin(), records.end());
  std::vector<SignatureRow> out;
  out.reserve(fits.size());
  for (const CellFitRecord &f : fits) {
    SignatureRow row;
    row.agent_id = f.agent_id;
    row.condition = f.condition;
    row.status = f.status;
    const std::vector<JudgmentRecord> data = select(all, f.agent_id, f.condition);
    row.n_judgments = data.size();
    try {
      row.ea = explaining_away(data);
    } catch (const MissingData &) {
    }
    try {
      row.mv = markov_violation(data);
    } catch (const MissingData &) {
    }
    if (f.status == CellStatus::Ok) {
      const BiasReport model = model_bias(f.result.params);
      row.bacs = bacs(f.result);
      row.mae = f.result.mae;
      row.loocv_r2 = f.loocv_r2;
      row.model_ea = model.ea;
      row.model_mv = model.mv;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<AlignmentRow> alignment_table(std::span<const JudgmentRecord> records,
                                          std::string_view reference_agent, int n_boot,
                                          std::uint64_t seed) {
  std::vector<JudgmentRecord> reference;
  std::map<std::pair<std::string, std::size_t>, std::vector<JudgmentRecord>> cells;
  const auto &conds = Condition::all();
  for (const auto &r : records) {
    if (r.agent_id == reference_agent) {
      reference.push_back(r);
      continue;
    }
    const auto idx = static_cast<std::size_t>(
        std::find(conds.begin(), conds.end(), r.condition) - conds.begin());
    cells[{r.agent_id, idx}].push_back(r);
  }
  std::vector<AlignmentRow> out;
  if (reference.empty()) return out;
  for (const auto &[key, data] : cells) {
    AlignmentRow row;
    row.agent_id = key.first;
    row.condition = conds[key.second];
    const std::uint64_t s = stream_seed(stream_seed(seed, fnv1a(row.agent_id)),
                                        fnv1a(row.condition.id()));
    try {
      row.report = spearman_alignment(data, reference, n_boot, s);
    } catch (const std::exception &e) {
      row.note = e.what();
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<DomainTestRow> domain_test_table(std::span<const JudgmentRecord> records) {
  std::map<std::string, std::map<std::string, std::vector<double>>> groups;
  for (const auto &r : records) groups[r.agent_id][r.domain].push_back(r.normalized);

  std::vector<DomainTestRow> out;
  std::vector<double> pvals;
  std::vector<std::size_t> tested;
  for (const auto &[agent, by_domain] : groups) {
    DomainTestRow row;
    row.agent_id = agent;
    std::vector<std::vector<double>> g;
    for (const auto &[d, values] : by_domain) {
      row.n += values.size();
      g.push_back(values);
    }
    if (g.size() < 2) {
      row.note = "fewer than two domains";
    } else {
      try {
        row.test = kruskal_wallis(g);
        tested.push_back(out.size());
        pvals.push_back(row.test->p);
      } catch (const std::exception &e) {
        row.note = e.what();
      }
    }
    out.push_back(std::move(row));
  }
  const std::vector<double> adjusted = bh_fdr(pvals);
  for (std::size_t k = 0; k < tested.size(); ++k) out[tested[k]].p_bh = adjusted[k];
  return out;
}

namespace {

struct ScaledPoint {
  std::string agent_id;
  Condition condition;
  std::array<double, 5> axes{};
};

std::vector<ScaledPoint> scaled_points(std::span<const SignatureRow> rows) {
  std::vector<SignaturePoint> population;
  for (const auto &r : rows) {
    if (auto p = r.point()) population.push_back(*p);
  }
  std::vector<ScaledPoint> out;
  if (population.empty()) return out;
  const SignatureScaler scaler(population);
  for (const auto &r : rows) {
    if (auto p = r.point()) out.push_back({r.agent_id, r.condition, scaler.scale(*p)});
  }
  return out;
}

}  // namespace

std::vector<RobustnessRow> robustness_table(std::span<const SignatureRow> rows) {
  const auto points = scaled_points(rows);
  std::set<std::string> agents;
  for (const auto &r : rows) agents.insert(r.agent_id);
  std::vector<RobustnessRow> out;
  for (const auto &agent : agents) {
    for (const std::string subset : {"all", "direct", "cot"}) {
      std::vector<std::array<double, 5>> pts;
      for (const auto &p : points) {
        if (p.agent_id != agent) continue;
        if (subset == "direct" && p.condition.style != Style::Direct) continue;
        if (subset == "cot" && p.condition.style != Style::Cot) continue;
        pts.push_back(p.axes);
      }
      RobustnessRow row{agent, subset, pts.size(), std::nullopt};
      if (pts.size() >= 2) row.dispersion = robustness_dispersion(pts);
      out.push_back(std::move(row));
    }
  }
  return out;
}

// ---- tables

namespace {

std::string style_name(Style s) { return s == Style::Direct ? "direct" : "cot"; }

std::vector<std::string> cell_prefix(const std::string &agent, const Condition &c) {
  return {agent, c.id(), c.experiment(), style_name(c.style)};
}

std::vector<std::string> with_prefix(const std::string &agent, const Condition &c,
                                     std::vector<std::string> rest) {
  auto row = cell_prefix(agent, c);
  row.insert(row.end(), rest.begin(), rest.end());
  return row;
}

const std::vector<std::string> kCellHeader = {"agent_id", "condition_id", "experiment", "style"};

std::vector<std::string> header_with(std::vector<std::string> rest) {
  auto h = kCellHeader;
  h.insert(h.end(), rest.begin(), rest.end());
  return h;
}

std::string metrics_csv(std::span<const SignatureRow> rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto &r : rows) {
    out.push_back(with_prefix(r.agent_id, r.condition,
                              {std::string(to_string(r.status)), std::to_string(r.n_judgments),
                               opt_double(r.ea), opt_double(r.mv), opt_double(r.bacs),
                               opt_double(r.mae), opt_double(r.loocv_r2), opt_double(r.model_ea),
                               opt_double(r.model_mv)}));
  }
  return detail::table_text(header_with({"status", "n_judgments", "ea", "mv", "bacs", "mae",
                                         "loocv_r2", "model_ea", "model_mv"}),
                            out);
}

// ---- figures

const std::array<const char *, 8> kPalette = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                               "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
constexpr const char *kHumanColor = "#e377c2";

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct BarDatum {
  std::string agent;
  std::string condition;
  double value = 0.0;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct Overlay {
  std::string label;
  double value = 0.0;
};

struct BarFigure {
  std::string name;
  std::string title;
  std::string y_label;
  std::vector<BarDatum> bars;
  std::vector<Overlay> overlays;  ///< human-baseline reference lines
};

json bar_spec(const BarFigure &f) {
  json values = json::array();
  for (const auto &b : f.bars) {
    json v{{"agent_id", b.agent}, {"condition_id", b.condition}, {"value", b.value}};
    if (b.lo) v["ci_low"] = *b.lo;
    if (b.hi) v["ci_high"] = *b.hi;
    values.push_back(v);
  }
  json layers = json::array();
  layers.push_back(
      json{{"data", {{"values", values}}},
           {"mark", "bar"},
           {"encoding",
            {{"x", {{"field", "condition_id"}, {"type", "nominal"}, {"title", "condition"}}},
             {"xOffset", {{"field", "agent_id"}}},
             {"y", {{"field", "value"}, {"type", "quantitative"}, {"title", f.y_label}}},
             {"color", {{"field", "agent_id"}, {"type", "nominal"}}}}}});
  if (std::any_of(f.bars.begin(), f.bars.end(), [](const BarDatum &b) { return b.lo.has_value(); })) {
    layers.push_back(
        json{{"data", {{"values", values}}},
             {"mark", "rule"},
             {"encoding",
              {{"x", {{"field", "condition_id"}, {"type", "nominal"}}},
               {"xOffset", {{"field", "agent_id"}}},
               {"y", {{"field", "ci_low"}, {"type", "quantitative"}}},
               {"y2", {{"field", "ci_high"}}}}}});
  }
  if (!f.overlays.empty()) {
    json ov = json::array();
    for (const auto &o : f.overlays) ov.push_back(json{{"label", o.label}, {"value", o.value}});
    layers.push_back(json{{"data", {{"values", ov}}},
                          {"mark", {{"type", "rule"}, {"strokeDash", {6, 4}}, {"color", kHumanColor}}},
                          {"encoding", {{"y", {{"field", "value"}, {"type", "quantitative"}}}}}});
  }
  return json{{"$schema", "https://vega.github.io/schema/vega-lite/v5.json"},
              {"title", f.title},
              {"width", 640},
              {"height", 320},
              {"layer", layers}};
}

std::string bar_svg(const BarFigure &f) {
  constexpr double W = 760, H = 420, L = 70, R = 150, T = 40, B = 110;
  std::vector<std::string> conditions;
  std::vector<std::string> agents;
  for (const auto &c : Condition::all()) {
    for (const auto &b : f.bars) {
      if (b.condition == c.id()) {
        conditions.push_back(c.id());
        break;
      }
    }
  }
  for (const auto &b : f.bars) {
    if (std::find(agents.begin(), agents.end(), b.agent) == agents.end()) agents.push_back(b.agent);
  }
  std::sort(agents.begin(), agents.end());

  double lo = 0.0, hi = 0.0;
  for (const auto &b : f.bars) {
    lo = std::min({lo, b.value, b.lo.value_or(b.value)});
    hi = std::max({hi, b.value, b.hi.value_or(b.value)});
  }
  for (const auto &o : f.overlays) {
    lo = std::min(lo, o.value);
    hi = std::max(hi, o.value);
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double pw = W - L - R, ph = H - T - B;
  auto y_of = [&](double v) { return T + ph * (hi - v) / (hi - lo); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(f.title) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << fixed(y_of(v))
      << "\" y2=\"" << fixed(y_of(v)) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << fixed(y_of(v) + 4)
      << "\" text-anchor=\"end\">" << fixed(v) << "</text>\n";
  }
  s << "<text transform=\"translate(16," << fixed(T + ph / 2) << ") rotate(-90)\" "
    << "text-anchor=\"middle\">" << xml_escape(f.y_label) << "</text>\n";
  const double group = conditions.empty() ? pw : pw / static_cast<double>(conditions.size());
  const double bar = agents.empty() ? 0.0 : group * 0.8 / static_cast<double>(agents.size());
  for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
    const double gx = L + group * static_cast<double>(ci);
    s << "<text transform=\"translate(" << fixed(gx + group / 2) << "," << fixed(T + ph + 12)
      << ") rotate(35)\">" << xml_escape(conditions[ci]) << "</text>\n";
    for (std::size_t ai = 0; ai < agents.size(); ++ai) {
      for (const auto &b : f.bars) {
        if (b.agent != agents[ai] || b.condition != conditions[ci]) continue;
        const double x = gx + group * 0.1 + bar * static_cast<double>(ai);
        const double y0 = y_of(std::max(0.0, b.value)), y1 = y_of(std::min(0.0, b.value));
        s << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y0) << "\" width=\""
          << fixed(bar * 0.9) << "\" height=\"" << fixed(std::max(0.5, y1 - y0))
          << "\" fill=\"" << kPalette[ai % kPalette.size()] << "\"/>\n";
        if (b.lo && b.hi) {
          const double cx = x + bar * 0.45;
          s << "<line x1=\"" << fixed(cx) << "\" x2=\"" << fixed(cx) << "\" y1=\""
            << fixed(y_of(*b.lo)) << "\" y2=\"" << fixed(y_of(*b.hi))
            << "\" stroke=\"black\"/>\n";
        }
      }
    }
  }
  s << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << fixed(y_of(0.0))
    << "\" y2=\"" << fixed(y_of(0.0)) << "\" stroke=\"black\"/>\n";
  for (const auto &o : f.overlays) {
    s << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << fixed(y_of(o.value))
      << "\" y2=\"" << fixed(y_of(o.value)) << "\" stroke=\"" << kHumanColor
      << "\" stroke-dasharray=\"6,4\"/>\n";
  }
  double ly = T;
  for (std::size_t ai = 0; ai < agents.size(); ++ai, ly += 16) {
    s << "<rect x=\"" << L + pw + 12 << "\" y=\"" << fixed(ly) << "\" width=\"10\" height=\"10\" "
      << "fill=\"" << kPalette[ai % kPalette.size()] << "\"/>\n";
    s << "<text x=\"" << L + pw + 26 << "\" y=\"" << fixed(ly + 9) << "\">"
      << xml_escape(agents[ai]) << "</text>\n";
  }
  for (const auto &o : f.overlays) {
    s << "<line x1=\"" << L + pw + 12 << "\" x2=\"" << L + pw + 22 << "\" y1=\"" << fixed(ly + 5)
      << "\" y2=\"" << fixed(ly + 5) << "\" stroke=\"" << kHumanColor
      << "\" stroke-dasharray=\"3,2\"/>\n";
    s << "<text x=\"" << L + pw + 26 << "\" y=\"" << fixed(ly + 9) << "\">"
      << xml_escape(o.label) << "</text>\n";
    ly += 16;
  }
  s << "</svg>\n";
  return s.str();
}

json scatter_spec(const std::vector<ScaledPoint> &points, const std::set<std::string> &humans) {
  json values = json::array();
  for (const auto &p : points) {
    values.push_back(json{{"agent_id", p.agent_id},
                          {"condition_id", p.condition.id()},
                          {"human", humans.count(p.agent_id) > 0},
                          {"bacs", p.axes[0]},
                          {"loocv_r2", p.axes[1]},
                          {"ea", p.axes[2]},
                          {"mv", p.axes[3]},
                          {"mae", p.axes[4]}});
  }
  return json{
      {"$schema", "https://vega.github.io/schema/vega-lite/v5.json"},
      {"title", "Robustness map (min-max scaled signatures)"},
      {"width", 480},
      {"height", 480},
      {"data", {{"values", values}}},
      {"mark", {{"type", "point"}, {"filled", true}}},
      {"encoding",
       {{"x", {{"field", "bacs"}, {"type", "quantitative"}, {"title", "BACS (scaled)"}}},
        {"y", {{"field", "ea"}, {"type", "quantitative"}, {"title", "EA (scaled)"}}},
        {"color", {{"field", "agent_id"}, {"type", "nominal"}}},
        {"shape", {{"field", "condition_id"}, {"type", "nominal"}}},
        {"tooltip",
         json::array({{{"field", "agent_id"}}, {{"field", "condition_id"}}, {{"field", "mae"}},
                      {{"field", "mv"}}, {{"field", "loocv_r2"}}})}}}};
}

std::string scatter_svg(const std::vector<ScaledPoint> &points, const std::set<std::string> &humans) {
  constexpr double W = 620, H = 520, L = 60, T = 40, P = 400;
  std::vector<std::string> agents;
  for (const auto &p : points) {
    if (std::find(agents.begin(), agents.end(), p.agent_id) == agents.end()) {
      agents.push_back(p.agent_id);
    }
  }
  std::sort(agents.begin(), agents.end());
  auto color = [&](const std::string &a) -> std::string {
    if (humans.count(a)) return kHumanColor;
    const auto i = static_cast<std::size_t>(std::find(agents.begin(), agents.end(), a) - agents.begin());
    return kPalette[i % kPalette.size()];
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << "Robustness map (min-max scaled signatures)</text>\n";
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << P << "\" height=\"" << P
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << L + P / 2 << "\" y=\"" << T + P + 30
    << "\" text-anchor=\"middle\">BACS (scaled)</text>\n";
  s << "<text transform=\"translate(20," << T + P / 2
    << ") rotate(-90)\" text-anchor=\"middle\">EA (scaled)</text>\n";
  for (const auto &p : points) {
    const double x = L + P * (0.05 + 0.9 * p.axes[0]);
    const double y = T + P * (0.95 - 0.9 * p.axes[2]);
    if (p.condition.style == Style::Direct) {
      s << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(y) << "\" r=\"5\" fill=\""
        << color(p.agent_id) << "\"/>\n";
    } else {
      s << "<rect x=\"" << fixed(x - 4.5) << "\" y=\"" << fixed(y - 4.5)
        << "\" width=\"9\" height=\"9\" fill=\"" << color(p.agent_id) << "\"/>\n";
    }
  }
  double ly = T;
  for (const auto &a : agents) {
    s << "<circle cx=\"" << L + P + 20 << "\" cy=\"" << fixed(ly + 5) << "\" r=\"5\" fill=\""
      << color(a) << "\"/>\n";
    s << "<text x=\"" << L + P + 30 << "\" y=\"" << fixed(ly + 9) << "\">" << xml_escape(a)
      << "</text>\n";
    ly += 16;
  }
  s << "<text x=\"" << L + P + 14 << "\" y=\"" << fixed(ly + 16)
    << "\">circle: direct, square: cot</text>\n";
  s << "</svg>\n";
  return s.str();
}

json load_json(const fs::path &path, std::string_view stage) {
  const std::string text = detail::read_text(path, stage);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": not JSON");
  return j;
}

}  // namespace

std::vector<SignatureRow> cmd_metrics(const fs::path &out) {
  const auto records = read_judgments(out / "judgments.csv");
  const auto fits = read_fits(out / "fits.csv");
  auto rows = signature_table(records, fits);
  detail::write_text(out / "metrics.csv", metrics_csv(rows));
  return rows;
}

ReportSummary cmd_report(const fs::path &out) {
  const PipelineConfig config = read_manifest_config(out);
  const auto records = read_judgments(out / "judgments.csv");
  const json quality = load_json(out / "run_quality.json", "run");
  const auto fits = read_fits(out / "fits.csv");

  std::set<std::string> humans;
  for (const auto &[agent, q] : quality.items()) {
    if (q.value("backend", "") == to_string(Backend::HumanFile)) humans.insert(agent);
  }

  const fs::path dir = out / "report";
  fs::remove_all(dir);
  std::map<std::string, std::string> files;  // relative path -> contents

  const auto rows = signature_table(records, fits);
  files["signatures.csv"] = metrics_csv(rows);

  std::vector<std::vector<std::string>> mae, loocv, bacs_rows, bias;
  BarFigure mae_fig{"mae", "Model fit error per condition", "MAE", {}, {}};
  BarFigure loocv_fig{"loocv", "Held-out task generalization (LOOCV)", "LOOCV R^2", {}, {}};
  BarFigure bacs_fig{"bacs", "Background-adjusted causal strength", "BACS", {}, {}};
  BarFigure ea_fig{"ea", "Explaining away from judgments", "EA", {}, {}};
  BarFigure mv_fig{"mv", "Markov violation from judgments", "MV", {}, {}};
  auto add = [&](BarFigure &fig, const SignatureRow &r, const std::optional<double> &v) {
    if (!v) return;
    if (humans.count(r.agent_id)) {
      fig.overlays.push_back({r.agent_id + " " + r.condition.id(), *v});
    } else {
      fig.bars.push_back({r.agent_id, r.condition.id(), *v, {}, {}});
    }
  };
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const SignatureRow &r = rows[k];
    const CellFitRecord &f = fits[k];
    const std::string status(to_string(r.status));
    const bool ok = f.status == CellStatus::Ok;
    mae.push_back(with_prefix(r.agent_id, r.condition,
                              {status, std::to_string(r.n_judgments), opt_double(r.mae)}));
    loocv.push_back(with_prefix(r.agent_id, r.condition, {status, opt_double(r.loocv_r2)}));
    bacs_rows.push_back(with_prefix(
        r.agent_id, r.condition,
        {status, opt_double(r.bacs), ok ? format_double(f.result.params.b) : "",
         ok ? format_double(f.result.params.m1) : "", ok ? format_double(f.result.params.m2) : ""}));
    bias.push_back(with_prefix(r.agent_id, r.condition,
                               {opt_double(r.ea), opt_double(r.mv), opt_double(r.model_ea),
                                opt_double(r.model_mv)}));
    add(mae_fig, r, r.mae);
    add(loocv_fig, r, r.loocv_r2);
    add(bacs_fig, r, r.bacs);
    add(ea_fig, r, r.ea);
    add(mv_fig, r, r.mv);
  }
  files["mae.csv"] = detail::table_text(header_with({"status", "n_judgments", "mae"}), mae);
  files["loocv.csv"] = detail::table_text(header_with({"status", "loocv_r2"}), loocv);
  files["bacs.csv"] =
      detail::table_text(header_with({"status", "bacs", "b", "m1", "m2"}), bacs_rows);
  files["bias.csv"] =
      detail::table_text(header_with({"ea", "mv", "model_ea", "model_mv"}), bias);

  json notes = json::array();
  std::vector<std::vector<std::string>> align;
  BarFigure align_fig{"alignment", "Spearman alignment with the human baseline", "rho", {}, {}};
  if (humans.empty()) {
    notes.push_back("alignment: no human-baseline agent in this run");
  } else {
    if (humans.size() > 1) notes.push_back("alignment: reference is " + *humans.begin());
    for (const auto &a : alignment_table(records, *humans.begin(), config.report.n_boot,
                                         config.report.boot_seed)) {
      if (humans.count(a.agent_id)) continue;
      const auto &r = a.report;
      align.push_back(with_prefix(
          a.agent_id, a.condition,
          {r ? format_double(r->rho) : "", r ? format_double(r->ci_low) : "",
           r ? format_double(r->ci_high) : "", r ? std::to_string(r->n_pairs) : "",
           r ? std::to_string(r->n_boot) : "", r ? std::to_string(r->n_valid_boot) : "", a.note}));
      if (r) align_fig.bars.push_back({a.agent_id, a.condition.id(), r->rho, r->ci_low, r->ci_high});
    }
  }
  files["alignment.csv"] = detail::table_text(
      header_with({"rho", "ci_low", "ci_high", "n_pairs", "n_boot", "n_valid_boot", "note"}), align);

  std::vector<std::vector<std::string>> domain;
  for (const auto &d : domain_test_table(records)) {
    domain.push_back({d.agent_id, std::to_string(d.n), d.test ? format_double(d.test->h) : "",
                      d.test ? std::to_string(d.test->df) : "",
                      d.test ? format_double(d.test->p) : "", opt_double(d.p_bh), d.note});
  }
  files["domain_test.csv"] =
      detail::table_text({"agent_id", "n", "h", "df", "p", "p_bh", "note"}, domain);

  std::vector<std::vector<std::string>> robust;
  for (const auto &r : robustness_table(rows)) {
    robust.push_back({r.agent_id, r.subset, std::to_string(r.n_points), opt_double(r.dispersion)});
  }
  files["robustness.csv"] =
      detail::table_text({"agent_id", "subset", "n_points", "dispersion"}, robust);
  const auto points = scaled_points(rows);
  std::vector<std::vector<std::string>> pts;
  for (const auto &p : points) {
    auto row = cell_prefix(p.agent_id, p.condition);
    for (double v : p.axes) row.push_back(format_double(v));
    pts.push_back(row);
  }
  files["robustness_points.csv"] =
      detail::table_text(header_with({"bacs", "loocv_r2", "ea", "mv", "mae"}), pts);

  for (const BarFigure *fig : {&align_fig, &mae_fig, &loocv_fig, &bacs_fig, &ea_fig, &mv_fig}) {
    files["figures/" + fig->name + ".vl.json"] = bar_spec(*fig).dump(2) + "\n";
    files["figures/" + fig->name + ".svg"] = bar_svg(*fig);
  }
  files["figures/robustness.vl.json"] = scatter_spec(points, humans).dump(2) + "\n";
  files["figures/robustness.svg"] = scatter_svg(points, humans);

  json dq{{"agents", json::object()}, {"cells", json::object()}, {"notes", notes}};
  for (const auto &[agent, q] : quality.items()) {
    json entry = q;
    json by_cond = json::object();
    for (const auto &c : Condition::all()) {
      const auto n = std::count_if(records.begin(), records.end(), [&](const JudgmentRecord &r) {
        return r.agent_id == agent && r.condition == c;
      });
      if (n > 0) by_cond[c.id()] = n;
    }
    entry["judgments_by_condition"] = by_cond;
    dq["agents"][agent] = entry;
  }
  json skipped = json::array(), failed = json::array(), no_loocv = json::array();
  std::size_t ok = 0;
  for (const auto &f : fits) {
    const std::string cell = f.agent_id + "/" + f.condition.id();
    if (f.status == CellStatus::Ok) {
      ++ok;
      if (!f.loocv_r2) no_loocv.push_back(json{{"cell", cell}, {"note", f.note}});
    } else if (f.status == CellStatus::Skipped) {
      skipped.push_back(cell);
    } else {
      failed.push_back(json{{"cell", cell}, {"note", f.note}});
    }
  }
  dq["cells"] = json{{"fitted", ok}, {"skipped", skipped}, {"failed", failed},
                     {"loocv_undefined", no_loocv}};
  dq["notes"].push_back(
      "robustness dispersion is the mean pairwise distance between min-max scaled "
      "(BACS, LOOCV R^2, EA, MV, MAE) points of one agent's conditions");
  files["data_quality.json"] = dq.dump(2) + "\n";

  ReportSummary summary{dir, {}};
  for (const auto &[name, text] : files) {
    detail::write_text(dir / name, text);
    summary.files.push_back(name);
  }
  return summary;
}

}  // namespace colliderlab::pipeline
