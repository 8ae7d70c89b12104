#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aes/pipeline.hpp"

namespace aes {

namespace {

// Machine formats share one number spelling so TSV and JSON agree byte for byte.
std::string num(const nlohmann::json& v) { return v.dump(); }

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string signed_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.3f", v);
  return buf;
}

std::vector<std::string> ordered_keys(const std::vector<nlohmann::json>& rows, const char* field) {
  std::vector<std::string> keys;
  for (const auto& row : rows)
    for (const auto& [k, v] : row.at(field).items())
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  return keys;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

void table(std::ostringstream& out, const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) line += (c ? "  " : "") + pad(cells[r][c], width[c]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  out << '\n';
}

}  // namespace

std::string render_tsv(const nlohmann::json& report) {
  std::ostringstream out;
  out << "# config_hash\t" << report.at("config_hash").get<std::string>() << '\n';
  out << "row\tprompt\ttrait\tkappa\tsd\truns\n";
  for (const auto& row : report.at("rows")) {
    const auto& agg = report.at("aggregate").at(row.get<std::string>());
    for (const auto& cell : agg.at("cells"))
      out << row.get<std::string>() << '\t' << cell.at("prompt").get<std::string>() << '\t'
          << cell.at("trait").get<std::string>() << '\t' << num(cell.at("kappa")) << '\t' << num(cell.at("sd"))
          << '\t' << num(agg.at("runs")) << '\n';
  }
  return out.str();
}

std::string render_tables(const nlohmann::json& report) {
  std::ostringstream out;
  const auto& rows = report.at("rows");
  const auto& agg = report.at("aggregate");
  out << "config " << report.at("config_hash").get<std::string>() << "  (" << report.at("kind").get<std::string>()
      << ", " << report.at("runs").size() << " seed(s))\n\n";

  std::vector<nlohmann::json> aggs;
  for (const auto& row : rows) aggs.push_back(agg.at(row.get<std::string>()));

  out << "Per-trait QWK (mean over prompts and seeds)\n";
  auto traits = ordered_keys(aggs, "per_trait");
  std::stable_partition(traits.begin(), traits.end(), [](const std::string& t) { return t == "overall"; });
  {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"stage"};
    header.insert(header.end(), traits.begin(), traits.end());
    header.emplace_back("AVG");
    header.emplace_back("SD");
    cells.push_back(header);
    for (std::size_t r = 0; r < aggs.size(); ++r) {
      std::vector<std::string> line{rows[r].get<std::string>()};
      double sd_sum = 0.0;
      for (const auto& t : traits) {
        line.push_back(aggs[r]["per_trait"].contains(t) ? fixed(aggs[r]["per_trait"][t].get<double>()) : "-");
        if (aggs[r]["per_trait_sd"].contains(t)) sd_sum += aggs[r]["per_trait_sd"][t].get<double>();
      }
      line.push_back(fixed(aggs[r]["grand_average"].get<double>()));
      line.push_back(fixed(traits.empty() ? 0.0 : sd_sum / double(traits.size())));
      cells.push_back(line);
    }
    table(out, cells);
  }

  out << "Per-prompt QWK (mean over traits and seeds)\n";
  const auto prompts = ordered_keys(aggs, "per_prompt");
  {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"stage"};
    header.insert(header.end(), prompts.begin(), prompts.end());
    header.emplace_back("AVG");
    cells.push_back(header);
    for (std::size_t r = 0; r < aggs.size(); ++r) {
      std::vector<std::string> line{rows[r].get<std::string>()};
      for (const auto& p : prompts)
        line.push_back(aggs[r]["per_prompt"].contains(p) ? fixed(aggs[r]["per_prompt"][p].get<double>()) : "-");
      line.push_back(fixed(aggs[r]["grand_average"].get<double>()));
      cells.push_back(line);
    }
    table(out, cells);
  }

  out << "Stage deltas\n";
  {
    std::vector<std::vector<std::string>> cells{{"stage", "AVG", "vs previous", "vs base"}};
    for (std::size_t r = 0; r < aggs.size(); ++r) {
      const double v = aggs[r]["grand_average"].get<double>();
      const double prev = r ? aggs[r - 1]["grand_average"].get<double>() : v;
      const double base = aggs[0]["grand_average"].get<double>();
      cells.push_back({rows[r].get<std::string>(), fixed(v), signed_fixed(v - prev), signed_fixed(v - base)});
    }
    table(out, cells);
  }

  std::vector<std::vector<std::string>> audit{{"seed", "stage", "prompt", "trait", "a", "b", "note"}};
  std::vector<std::vector<std::string>> diag{{"seed", "prompt(s)", "k", "top-k", "all", "bottom-k", "balanced-k"}};
  for (const auto& runj : report.at("runs")) {
    const std::string seed = num(runj.at("seed"));
    for (const auto& unit : runj.at("provenance").at("units")) {
      for (const auto& [key, entries] : unit.items()) {
        if (key.rfind("alignment", 0) != 0) continue;
        for (const auto& e : entries)
          audit.push_back({seed, key, e.at("prompt").get<std::string>(), e.at("trait").get<std::string>(),
                           fixed(e.at("a").get<double>()), fixed(e.at("b").get<double>()),
                           e.contains("warning") ? "INVERTED" : ""});
      }
      if (unit.contains("uncertainty_groups")) {
        const auto& g = unit["uncertainty_groups"];
        std::string ps;
        for (const auto& p : unit.at("prompts")) ps += (ps.empty() ? "" : "+") + p.get<std::string>();
        diag.push_back({seed, ps, num(g.at("k")), fixed(g.at("top_k").get<double>()), fixed(g.at("all").get<double>()),
                        fixed(g.at("bottom_k").get<double>()), fixed(g.at("balanced_k").get<double>())});
      }
    }
  }
  if (audit.size() > 1) {
    out << "Score alignment audit (normalized targets)\n";
    table(out, audit);
  }
  if (diag.size() > 1) {
    out << "Uncertainty groups (test QWK by MC-dropout uncertainty)\n";
    table(out, diag);
  }
  return out.str();
}

std::vector<std::filesystem::path> write_report(const nlohmann::json& report, const std::vector<std::string>& formats,
                                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& f : formats) {
    std::string body;
    std::filesystem::path path;
    if (f == "json") {
      body = report.dump(2) + "\n";
      path = dir / "report.json";
    } else if (f == "tsv") {
      body = render_tsv(report);
      path = dir / "report.tsv";
    } else if (f == "txt") {
      body = render_tables(report);
      path = dir / "report.txt";
    } else {
      throw Error("unknown report format '" + f + "' (expected tsv, json, txt)");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << body;
    written.push_back(path);
  }
  return written;
}

}  // namespace aes
