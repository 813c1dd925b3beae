#include "sakit/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sakit/error.hpp"
#include "sakit/flops.hpp"
#include "sakit/graph.hpp"
#include "sakit/layers.hpp"

namespace sakit::report {

namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1"};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write '" + p.string() + "'");
  o << s;
}

std::string svg_open(int w, int h) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace

std::vector<std::vector<double>> proportions(const net::AllocationPlan& plan) {
  plan.validate();
  std::vector<std::vector<double>> out;
  for (const auto& row : plan.rows) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    std::vector<double> p;
    for (int c : row) p.push_back(c / total);
    out.push_back(std::move(p));
  }
  return out;
}

std::string proportions_csv(const net::AllocationPlan& plan) {
  std::string out = "k";
  for (int f : plan.scale_factors) out += ",s" + std::to_string(f);
  out += '\n';
  const auto p = proportions(plan);
  for (std::size_t k = 0; k < p.size(); ++k) {
    out += std::to_string(k + 1);
    for (double v : p[k]) out += "," + fmt("%.3f", v);
    out += '\n';
  }
  return out;
}

std::string proportions_svg(const net::AllocationPlan& plan) {
  const auto p = proportions(plan);
  const int left = 50, top = 30, plot_h = 240, bar = std::max(4, std::min(24, 720 / std::max<int>(1, static_cast<int>(p.size()))));
  const int w = left + bar * static_cast<int>(p.size()) + 130, h = top + plot_h + 50;
  std::string s = svg_open(w, h);
  s += "<text x=\"" + std::to_string(left) + "\" y=\"18\">Neuron proportion per scale</text>\n";
  for (std::size_t k = 0; k < p.size(); ++k) {
    double y = top + plot_h;
    for (std::size_t l = 0; l < p[k].size(); ++l) {
      const double hgt = p[k][l] * plot_h;
      y -= hgt;
      s += "<rect x=\"" + std::to_string(left + static_cast<int>(k) * bar) + "\" y=\"" + fmt("%.2f", y) +
           "\" width=\"" + std::to_string(bar - 1) + "\" height=\"" + fmt("%.2f", hgt) + "\" fill=\"" +
           kPalette[l % std::size(kPalette)] + "\"><title>block " + std::to_string(k + 1) + " s" +
           std::to_string(plan.scale_factors[l]) + ": " + fmt("%.3f", p[k][l]) + "</title></rect>\n";
    }
  }
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h - t * plot_h / 4.0;
    s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + fmt("%.1f", y + 4) + "\" text-anchor=\"end\">" +
         fmt("%.2f", t / 4.0) + "</text>\n";
  }
  s += "<text x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(top + plot_h + 20) + "\">block 1.." +
       std::to_string(p.size()) + "</text>\n";
  const int lx = left + bar * static_cast<int>(p.size()) + 20;
  for (std::size_t l = 0; l < plan.scale_factors.size(); ++l) {
    const int ly = top + 16 * static_cast<int>(l);
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(ly) + "\" width=\"10\" height=\"10\" fill=\"" +
         kPalette[l % std::size(kPalette)] + "\"/>\n";
    s += "<text x=\"" + std::to_string(lx + 16) + "\" y=\"" + std::to_string(ly + 9) + "\">" +
         xml_escape("scale " + std::to_string(plan.scale_factors[l])) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string rf_svg(const std::vector<rf::BlockRF>& rows) {
  const int left = 50, top = 30, plot_w = 480, plot_h = 240;
  std::string s = svg_open(left + plot_w + 120, top + plot_h + 50);
  s += "<text x=\"" + std::to_string(left) + "\" y=\"18\">Receptive field range per block</text>\n";
  double ymax = 1;
  for (const auto& r : rows) ymax = std::max(ymax, boost::rational_cast<double>(r.interval.max.rf));
  auto px = [&](std::size_t i) {
    return left + (rows.size() <= 1 ? plot_w / 2.0 : plot_w * static_cast<double>(i) / (rows.size() - 1));
  };
  auto py = [&](const rf::Rational& v) { return top + plot_h - plot_h * boost::rational_cast<double>(v) / ymax; };
  const char* names[] = {"min", "max"};
  for (int series = 0; series < 2; ++series) {
    std::string pts;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& v = series == 0 ? rows[i].interval.min.rf : rows[i].interval.max.rf;
      pts += fmt("%.2f", px(i)) + "," + fmt("%.2f", py(v)) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    s += std::string("<polyline fill=\"none\" stroke-width=\"2\" stroke=\"") + kPalette[series] + "\" points=\"" + pts +
         "\"/>\n";
    s += "<text x=\"" + std::to_string(left + plot_w + 10) + "\" y=\"" + std::to_string(top + 14 * series + 10) +
         "\" fill=\"" + kPalette[series] + "\">" + names[series] + " RF</text>\n";
  }
  s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top + plot_h) + "\" x2=\"" +
       std::to_string(left + plot_w) + "\" y2=\"" + std::to_string(top + plot_h) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(top + 4) + "\" text-anchor=\"end\">" +
       fmt("%.0f", ymax) + "</text>\n";
  s += "<text x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(top + plot_h + 20) + "\">block 1.." +
       std::to_string(rows.size()) + "</text>\n";
  return s + "</svg>\n";
}

void emit_report(const net::AllocationPlan& plan, const std::vector<rf::BlockRF>& rf_rows, const fs::path& out_dir) {
  write_text(out_dir / "proportions.csv", proportions_csv(plan));
  write_text(out_dir / "proportions.svg", proportions_svg(plan));
  write_text(out_dir / "rf.csv", rf::rf_csv(rf_rows));
  write_text(out_dir / "rf.svg", rf_svg(rf_rows));
}

BenchResult bench(const NetworkSpec& spec, int batch, int repeats, int warmup) {
  if (repeats < 1) throw Error("bench repeats must be positive");
  if (batch < 1) throw Error("bench batch must be positive");
  Graph<float> g(spec);
  initialize_parameters(g, 0);
  Feed<float> feed;
  for (const auto& l : g.compiled()) {
    if (const auto* in = std::get_if<layers::InputOp>(&l.attrs)) {
      Shape s{batch};
      s.insert(s.end(), in->shape.begin(), in->shape.end());
      feed.tensors[l.name] = Tensor(s, 0.0f);
    } else if (std::holds_alternative<layers::LabelsOp>(l.attrs)) {
      feed.labels[l.name].assign(static_cast<std::size_t>(batch), 0);
    }
  }
  for (int i = 0; i < warmup; ++i) g.forward(feed, Mode::infer);
  std::vector<double> ms;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    g.forward(feed, Mode::infer);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchResult r;
  r.repeats = repeats;
  r.batch = batch;
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / repeats;
  std::sort(ms.begin(), ms.end());
  auto pct = [&](double q) { return ms[static_cast<std::size_t>(q * (repeats - 1) + 0.5)]; };
  r.p50_ms = pct(0.5);
  r.p90_ms = pct(0.9);
  r.min_ms = ms.front();
  r.macs = flops::network_flops(spec).total_macs;
  return r;
}

std::string bench_csv(const BenchResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "batch,repeats,mean_ms,p50_ms,p90_ms,min_ms,macs_per_sample\n%d,%d,%.3f,%.3f,%.3f,%.3f,%lld\n",
                r.batch, r.repeats, r.mean_ms, r.p50_ms, r.p90_ms, r.min_ms, static_cast<long long>(r.macs));
  return buf;
}

}  // namespace sakit::report
