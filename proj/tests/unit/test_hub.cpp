#include <gtest/gtest.h>

#include <thread>

#include "perfstream/frame_hub.hpp"

using namespace perfstream;

TEST(FrameHub, SnapshotFirstThenBroadcasts) {
  FrameHub hub;
  std::vector<std::string> a, b;
  const ClientId ia = hub.connect([&](const std::string& s) { a.push_back(s); return true; });
  hub.deliver_snapshot(ia, "snap-a");
  hub.broadcast("f1");
  const ClientId ib = hub.connect([&](const std::string& s) { b.push_back(s); return true; });
  hub.broadcast("f2");  // b is not ready yet
  hub.deliver_snapshot(ib, "snap-b");
  hub.broadcast("f3");
  EXPECT_EQ(a, (std::vector<std::string>{"snap-a", "f1", "f2", "f3"}));
  EXPECT_EQ(b, (std::vector<std::string>{"snap-b", "f3"}));
}

TEST(FrameHub, BroadcastIsByteIdentical) {
  FrameHub hub;
  std::vector<std::string> got(3);
  for (int i = 0; i < 3; ++i) {
    const ClientId id = hub.connect([&, i](const std::string& s) { got[static_cast<std::size_t>(i)] = s; return true; });
    hub.deliver_snapshot(id, "s");
  }
  const std::string frame = R"({"type":"frame","payload":{"t":7,"x":[1.5,2]}})";
  EXPECT_EQ(hub.broadcast(frame), 3u);
  for (const auto& g : got) EXPECT_EQ(g, frame);
}

TEST(FrameHub, FailingClientDroppedAlone) {
  FrameHub hub;
  int good = 0;
  const ClientId ok = hub.connect([&](const std::string&) { ++good; return true; });
  const ClientId bad = hub.connect([](const std::string& s) { return s == "snap"; });
  const ClientId thrower = hub.connect([](const std::string& s) {
    if (s != "snap") throw std::runtime_error("socket gone");
    return true;
  });
  for (ClientId id : {ok, bad, thrower}) hub.deliver_snapshot(id, "snap");
  EXPECT_EQ(hub.broadcast("f"), 1u);
  EXPECT_EQ(hub.size(), 1u);
  EXPECT_TRUE(hub.contains(ok));
  EXPECT_EQ(hub.dropped(), 2);
  hub.broadcast("g");
  EXPECT_EQ(good, 3);
}

TEST(FrameHub, UnicastAndDisconnect) {
  FrameHub hub;
  std::vector<std::string> a;
  const ClientId id = hub.connect([&](const std::string& s) { a.push_back(s); return true; });
  EXPECT_TRUE(hub.unicast(id, "err"));
  hub.disconnect(id);
  EXPECT_FALSE(hub.unicast(id, "x"));
  EXPECT_FALSE(hub.deliver_snapshot(id, "x"));
  EXPECT_EQ(a, (std::vector<std::string>{"err"}));
}

TEST(ParseControl, MalformedYieldsErrorEnvelope) {
  nlohmann::json err;
  EXPECT_FALSE(parse_control("{nope", &err));
  EXPECT_EQ(err["type"], "error");
  EXPECT_TRUE(parse_control(R"({"type":"pause"})", &err));
}

TEST(Channel, FifoAcrossThreadsAndClose) {
  Channel<int> ch;
  std::thread producer([&] {
    for (int i = 0; i < 1000; ++i) ch.push(i);
    ch.close();
  });
  int expect = 0;
  while (auto v = ch.pop()) EXPECT_EQ(*v, expect++);
  producer.join();
  EXPECT_EQ(expect, 1000);
  EXPECT_FALSE(ch.push(1));
  EXPECT_FALSE(ch.pop_for(std::chrono::milliseconds(1)));
}
