#include "flm/metrics.hpp"

#include <cstdio>

namespace flm {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

const char* RunMetrics::csv_header() {
  return "step,split,objective,loss_total,loss_R,loss_l2r,loss_r2l,recon_acc,r_pred_meas,"
         "r_corr_meas,lr,wall_clock_s";
}

static void append_row(std::string& out, const MetricsRow& r, bool with_wallclock) {
  out += std::to_string(r.step);
  out += ',';
  out += r.split;
  out += ',';
  out += r.objective;
  for (double v : {r.loss_total, r.loss_R, r.loss_l2r, r.loss_r2l, r.recon_acc, r.r_pred,
                   r.r_corr, r.lr}) {
    out += ',';
    out += format_double(v);
  }
  out += ',';
  if (with_wallclock) out += format_double(r.wall_clock_s);
  out += '\n';
}

std::string RunMetrics::to_csv() const {
  std::string out = csv_header();
  out += '\n';
  for (const auto& r : rows) append_row(out, r, true);
  return out;
}

std::string RunMetrics::to_csv_no_wallclock() const {
  std::string out = csv_header();
  out += '\n';
  for (const auto& r : rows) append_row(out, r, false);
  return out;
}

}  // namespace flm
