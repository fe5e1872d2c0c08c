#pragma once

#include <string>
#include <vector>

// MQTT 3.1.1 wildcard cases: filter, topic, expected match.
struct TopicLaw {
  std::string filter;
  std::string topic;
  bool matches;
};

inline const std::vector<TopicLaw>& topic_laws() {
  static const std::vector<TopicLaw> laws{
      {"fleet/12/anomaly", "fleet/12/anomaly", true},
      {"fleet/12/anomaly", "fleet/13/anomaly", false},
      {"fleet/12/anomaly", "fleet/12", false},
      {"fleet/12", "fleet/12/anomaly", false},
      {"fleet/+/anomaly", "fleet/7/anomaly", true},
      {"fleet/+/anomaly", "fleet/7/raw", false},
      {"fleet/+/anomaly", "fleet/anomaly", false},
      {"fleet/+/anomaly", "fleet/7/8/anomaly", false},
      {"fleet/#", "fleet/7/anomaly/raw", true},
      {"fleet/+", "fleet/7/anomaly/raw", false},
      {"fleet/#", "fleet", true},
      {"fleet/#", "fleet/7", true},
      {"fleet/#", "erp/order", false},
      {"#", "fleet/7/anomaly", true},
      {"#", "a", true},
      {"#", "erp/order", true},
      {"+", "a", true},
      {"+", "a/b", false},
      {"+/+", "a/b", true},
      {"+/+", "a", false},
      {"+/#", "a", true},
      {"+/#", "a/b/c", true},
      {"a/+/c", "a/b/c", true},
      {"a/+/c", "a/b/d", false},
      {"a/+/#", "a/b", true},
      {"a/+/#", "a", false},
      {"vendor/print/+", "vendor/print/HND", true},
      {"vendor/print/+", "vendor/print", false},
      {"erp/order", "erp/orders", false},
      {"Fleet/7", "fleet/7", false},
      {"fleet/+/anomaly/#", "fleet/3/anomaly", true},
      {"fleet/+/anomaly/#", "fleet/3/anomaly/x/y", true},
      {"+/7/+", "fleet/7/anomaly", true},
      {"+/7/+", "fleet/8/anomaly", false},
  };
  return laws;
}

// Filters that must be rejected.
inline const std::vector<std::string>& bad_filters() {
  static const std::vector<std::string> filters{"fleet/#/anomaly", "#/x", "fleet/a+", "fleet//x", "fl#", ""};
  return filters;
}
