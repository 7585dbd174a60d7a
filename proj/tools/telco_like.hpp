#pragma once

// Deterministic generator for a synthetic churn table with the column
// layout of the public Telco Customer Churn file (customerID, 19
// descriptive variables, Churn). Used when the real file is not at hand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>

#include <delta_recourse/rng.hpp>
#include <delta_recourse/text.hpp>

namespace delta_recourse::synth {

inline void write_telco_like(std::ostream& out, std::size_t rows = 7043, std::uint64_t seed = 2024) {
  Rng rng(seed);
  auto coin = [&](double p) { return rng.uniform() < p; };
  auto normal = [&] {
    const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  };
  auto money = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  csv::write_record(out, {"customerID", "gender", "SeniorCitizen", "Partner", "Dependents", "tenure",
                          "PhoneService", "MultipleLines", "InternetService", "OnlineSecurity", "OnlineBackup",
                          "DeviceProtection", "TechSupport", "StreamingTV", "StreamingMovies", "Contract",
                          "PaperlessBilling", "PaymentMethod", "MonthlyCharges", "TotalCharges", "Churn"});
  for (std::size_t r = 0; r < rows; ++r) {
    char id[16];
    std::snprintf(id, sizeof(id), "C%05zu", r + 1);
    const bool female = coin(0.5);
    const bool senior = coin(0.16);
    const bool partner = coin(0.48);
    const bool dependents = coin(partner ? 0.5 : 0.1);

    int tenure;
    const double t = rng.uniform();
    if (t < 0.0016) tenure = 0;
    else if (t < 0.16) tenure = 1 + static_cast<int>(rng.uniform_index(3));
    else if (t < 0.26) tenure = 70 + static_cast<int>(rng.uniform_index(3));
    else tenure = 1 + static_cast<int>(rng.uniform_index(72));

    const double p_monthly = 0.85 - 0.6 * tenure / 72.0;
    const double c = rng.uniform();
    const char* contract = c < p_monthly ? "Month-to-month" : c < p_monthly + (1 - p_monthly) * 0.45 ? "One year" : "Two year";
    const bool monthly = contract[0] == 'M', two_year = contract[0] == 'T';

    const bool phone = coin(0.9);
    const bool multiple = phone && coin(0.47);
    const double i = rng.uniform();
    const char* internet = i < 0.44 ? "Fiber optic" : i < 0.78 ? "DSL" : "No";
    const bool has_internet = internet[0] != 'N';
    const bool fiber = internet[0] == 'F';
    auto addon = [&](double p) -> std::string {
      if (!has_internet) return "No internet service";
      return coin(p) ? "Yes" : "No";
    };
    const double loyal = monthly ? 0.0 : 0.2;
    const std::string security = addon(0.3 + loyal), backup = addon(0.44), device = addon(0.44),
                      tech = addon(0.3 + loyal), tv = addon(0.49), movies = addon(0.49);
    const bool paperless = coin(0.59);
    const double pm = rng.uniform();
    const char* payment = pm < 0.34 ? "Electronic check" : pm < 0.57 ? "Mailed check"
                          : pm < 0.79 ? "Bank transfer (automatic)" : "Credit card (automatic)";

    int extras = 0;
    for (const auto* s : {&security, &backup, &device, &tech, &tv, &movies}) extras += *s == "Yes";
    double monthly_charge = 20.0 + (phone ? 5.0 : 0.0) + (multiple ? 5.0 : 0.0) +
                            (fiber ? 50.0 : has_internet ? 25.0 : 0.0) + 5.0 * extras + 3.0 * normal();
    monthly_charge = std::clamp(monthly_charge, 18.25, 118.75);
    const std::string total = tenure == 0 ? " " : money(tenure * monthly_charge * (1.0 + 0.02 * normal()));

    double z = -2.55 + (monthly ? 1.3 : 0.0) - (two_year ? 1.0 : 0.0) + 1.0 - 2.0 * std::log1p(tenure) / std::log(73.0) +
               (fiber ? 0.9 : 0.0) - (has_internet ? 0.0 : 0.9) + (pm < 0.34 ? 0.6 : 0.0) +
               (security == "No" ? 0.45 : 0.0) + (tech == "No" ? 0.35 : 0.0) + (senior ? 0.3 : 0.0) +
               (paperless ? 0.3 : 0.0) - (dependents ? 0.2 : 0.0);
    const bool churn = coin(1.0 / (1.0 + std::exp(-z)));

    csv::write_record(out, {id, female ? "Female" : "Male", senior ? "1" : "0", partner ? "Yes" : "No",
                            dependents ? "Yes" : "No", std::to_string(tenure), phone ? "Yes" : "No",
                            !phone ? "No phone service" : multiple ? "Yes" : "No", internet, security, backup,
                            device, tech, tv, movies, contract, paperless ? "Yes" : "No", payment,
                            money(monthly_charge), total, churn ? "Yes" : "No"});
  }
}

}  // namespace delta_recourse::synth
