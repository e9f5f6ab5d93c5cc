#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "gridtrack/mailbox.hpp"
#include "gridtrack/pubsub.hpp"
#include "gridtrack/reqrep.hpp"
#include "gridtrack/session_server.hpp"
#include "gridtrack/tracking.hpp"
#include "oracles/reqrep_clock.hpp"

using namespace gridtrack;
using namespace std::chrono_literals;

namespace {

FrameMessage frame(const std::string& cam, std::uint64_t seq, TimestampUs ts = 0) {
  return make_kp17_message(cam, seq, ts, std::vector<PoseDetection>{});
}

std::vector<FrameMessage> capture_stream(const std::string& cam, int n, double fps) {
  std::vector<FrameMessage> out;
  for (int k = 0; k < n; ++k) out.push_back(frame(cam, static_cast<std::uint64_t>(k), static_cast<TimestampUs>(k * 1e6 / fps)));
  return out;
}

struct Received {
  std::mutex mu;
  std::vector<std::uint64_t> seqs;
  std::vector<TimestampUs> arrival_us;
};

TimestampUs now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

TEST(ReqRepClock, ThrottledSenderSkipsToNewestFrame) {
  const auto d = oracle::reqrep_schedule(30.0, 300'000, 20'000'000);
  std::vector<TimestampUs> ts;
  bool gaps = false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d[i].seq, d[i].newest_at_send);
    if (i > 0) {
      EXPECT_GT(d[i].seq, d[i - 1].seq);
      gaps = gaps || d[i].seq > d[i - 1].seq + 1;
    }
    ts.push_back(d[i].send_us);
  }
  EXPECT_TRUE(gaps);
  EXPECT_NEAR(fps_stats(ts), 1.0 / 0.3, 0.02);
}

TEST(ReqRepClock, NoBackpressureMeansNoGaps) {
  const auto d = oracle::reqrep_schedule(30.0, 0, 5'000'000);
  for (std::size_t i = 1; i < d.size(); ++i) EXPECT_EQ(d[i].seq, d[i - 1].seq + 1);
  EXPECT_EQ(d.size(), 151U);
}

TEST(ReqRepClock, ThreeHundredMsProcessingBracketsObservedRate) {
  for (std::int64_t proc : {300'000, 325'000, 350'000}) {
    const auto d = oracle::reqrep_schedule(30.0, proc, 30'000'000);
    std::vector<TimestampUs> ts;
    for (const auto& x : d) ts.push_back(x.send_us);
    const double fps = fps_stats(ts);
    EXPECT_GE(fps, 2.6);
    EXPECT_LE(fps, 3.45);
  }
}

TEST(LatestSlot, KeepsOnlyNewest) {
  LatestSlot<int> slot;
  slot.put(1);
  slot.put(2);
  slot.put(3);
  EXPECT_EQ(slot.overwritten(), 2U);
  EXPECT_EQ(slot.take(), 3);
  EXPECT_FALSE(slot.try_take());
  slot.put(4);
  slot.close();
  EXPECT_EQ(slot.take(), 4);
  EXPECT_FALSE(slot.take());
}

TEST(ReqClient, SecondSendBeforeRepIsProtocolViolation) {
  net::Listener listener({"127.0.0.1", 0});
  ReqClient client({"127.0.0.1", listener.port()});
  client.connect();
  auto peer = listener.accept(1000ms);
  ASSERT_TRUE(peer);
  client.send(frame("cam0", 1));
  EXPECT_TRUE(client.outstanding());
  EXPECT_THROW(client.send(frame("cam0", 2)), ProtocolViolationError);
  const std::byte rep = kRepByte;
  peer->send_all(std::span(&rep, 1));
  client.await_reply(1000ms);
  EXPECT_FALSE(client.outstanding());
  EXPECT_NO_THROW(client.send(frame("cam0", 2)));
}

TEST(ReqClient, TimeoutReconnectsAndResumesSequence) {
  net::Listener listener({"127.0.0.1", 0});
  std::vector<std::uint64_t> seen;
  std::thread station([&] {
    auto first = listener.accept(2000ms);  // reads but never replies
    ASSERT_TRUE(first);
    seen.push_back(decode_frame(*net::read_frame_bytes(*first)).header.seq);
    auto second = listener.accept(3000ms);
    ASSERT_TRUE(second);
    seen.push_back(decode_frame(*net::read_frame_bytes(*second)).header.seq);
    const std::byte rep = kRepByte;
    second->send_all(std::span(&rep, 1));
  });
  ReqClient client({"127.0.0.1", listener.port()});
  client.connect();
  EXPECT_FALSE(client.request(frame("cam0", 10), 200ms));
  EXPECT_FALSE(client.connected());
  EXPECT_TRUE(client.request(frame("cam0", 11), 2000ms));
  station.join();
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{10, 11}));
}

TEST(ReqRepLoopback, FastReceiverSeesEveryFrame) {
  Received rx;
  SessionServer server({"127.0.0.1", 0}, TransportMode::reqrep,
                       {[&](FrameMessage&& m) {
                          std::lock_guard lock(rx.mu);
                          rx.seqs.push_back(m.header.seq);
                        },
                        {}});
  server.start();
  CameraNode node(CameraNodeOptions{{"127.0.0.1", server.port()}});
  const auto frames = capture_stream("cam0", 30, 30.0);
  std::thread capture([&] { replay_paced(node.mailbox(), frames); });
  const auto stats = node.run();
  capture.join();
  server.stop();
  ASSERT_EQ(rx.seqs.size(), 30U);
  for (std::size_t i = 0; i < rx.seqs.size(); ++i) EXPECT_EQ(rx.seqs[i], i);
  EXPECT_EQ(stats.acked, 30U);
  EXPECT_EQ(server.stats().reps, 30U);
}

TEST(ReqRepLoopback, SlowReceiverThrottlesSenderAndDropsStaleFrames) {
  Received rx;
  SessionServer server({"127.0.0.1", 0}, TransportMode::reqrep,
                       {[&](FrameMessage&& m) {
                          {
                            std::lock_guard lock(rx.mu);
                            rx.seqs.push_back(m.header.seq);
                            rx.arrival_us.push_back(now_us());
                          }
                          std::this_thread::sleep_for(300ms);
                        },
                        {}});
  server.start();
  CameraNode node(CameraNodeOptions{{"127.0.0.1", server.port()}});
  const auto frames = capture_stream("cam0", 90, 30.0);
  std::thread capture([&] { replay_paced(node.mailbox(), frames); });
  const auto stats = node.run();
  capture.join();
  server.stop();

  ASSERT_GE(rx.seqs.size(), 8U);
  bool gaps = false;
  for (std::size_t i = 1; i < rx.seqs.size(); ++i) {
    EXPECT_GT(rx.seqs[i], rx.seqs[i - 1]);
    gaps = gaps || rx.seqs[i] > rx.seqs[i - 1] + 1;
  }
  EXPECT_TRUE(gaps);
  EXPECT_GT(node.mailbox().overwritten(), 0U);
  EXPECT_EQ(stats.sent_seqs, rx.seqs);
  const double fps = fps_stats(rx.arrival_us);
  EXPECT_GE(fps, 3.13);
  EXPECT_LE(fps, 3.53);
}

TEST(SessionServer, MalformedMessageCountedAndSessionContinues) {
  Received rx;
  std::atomic<int> malformed{0};
  SessionServer server({"127.0.0.1", 0}, TransportMode::reqrep,
                       {[&](FrameMessage&& m) {
                          std::lock_guard lock(rx.mu);
                          rx.seqs.push_back(m.header.seq);
                        },
                        [&](const Error&) { ++malformed; }});
  server.start();
  ReqClient client({"127.0.0.1", server.port()});
  client.connect();
  ASSERT_TRUE(client.request(frame("cam0", 1), 1000ms));

  // Well-framed message whose header is garbage.
  auto sock = net::connect_tcp({"127.0.0.1", server.port()});
  std::vector<std::byte> bad{std::byte{'G'}, std::byte{'T'}, std::byte{'K'}, std::byte{'1'}};
  detail::put_u32_be(bad, 3);
  for (char c : std::string("xyz")) bad.push_back(static_cast<std::byte>(c));
  detail::put_u32_be(bad, 0);
  sock.send_all(bad);
  std::byte rep{};
  ASSERT_TRUE(sock.recv_exact(std::span(&rep, 1), 1000ms));
  sock.send_all(encode_frame(frame("cam1", 5)));
  ASSERT_TRUE(sock.recv_exact(std::span(&rep, 1), 1000ms));

  ASSERT_TRUE(client.request(frame("cam0", 2), 1000ms));
  server.stop();
  EXPECT_EQ(malformed, 1);
  EXPECT_EQ(rx.seqs.size(), 3U);
  EXPECT_EQ(server.stats().reps, 4U);
  EXPECT_EQ(server.stats().framed, 4U);
}

TEST(SessionServer, BadMagicClosesSession) {
  std::atomic<int> malformed{0};
  SessionServer server({"127.0.0.1", 0}, TransportMode::reqrep, {{}, [&](const Error&) { ++malformed; }});
  server.start();
  auto sock = net::connect_tcp({"127.0.0.1", server.port()});
  std::vector<std::byte> junk(16, std::byte{'Z'});
  sock.send_all(junk);
  std::byte b{};
  bool closed = false;
  try {
    closed = !sock.recv_exact(std::span(&b, 1), 2000ms);  // EOF
  } catch (const net::TimeoutError&) {
    closed = false;
  } catch (const TransportError&) {
    closed = true;  // reset: the server discarded our unread bytes
  }
  EXPECT_TRUE(closed);
  server.stop();
  EXPECT_EQ(malformed, 1);
  EXPECT_EQ(server.stats().desynced, 1U);
}

TEST(Conflation, KeepsHighestSeq) {
  ConflationMap map;
  EXPECT_TRUE(map.offer(frame("cam0", 1)));
  EXPECT_TRUE(map.offer(frame("cam0", 2)));
  EXPECT_TRUE(map.offer(frame("cam0", 3)));
  EXPECT_EQ(map.latest("cam0")->header.seq, 3U);
  EXPECT_EQ(map.size(), 1U);
}

TEST(Conflation, DiscardsStaleArrivals) {
  ConflationMap map;
  map.offer(frame("cam0", 5));
  map.offer(frame("cam1", 2));
  EXPECT_FALSE(map.offer(frame("cam0", 4)));
  EXPECT_EQ(map.seq_snapshot(), (std::map<std::string, std::uint64_t>{{"cam0", 5}, {"cam1", 2}}));
  EXPECT_EQ(map.discarded(), 1U);
}

TEST(Conflation, InterleavedFuzzMatchesMaxScan) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::uint64_t> seq(0, 5000);
  std::bernoulli_distribution pick(0.5);
  ConflationMap map;
  std::vector<std::pair<std::string, std::uint64_t>> arrivals;
  for (int i = 0; i < 10000; ++i) {
    arrivals.emplace_back(pick(rng) ? "cam0" : "cam1", seq(rng));
    map.offer(frame(arrivals.back().first, arrivals.back().second));
    ASSERT_LE(map.size(), 2U);
  }
  std::map<std::string, std::uint64_t> expected;
  for (const auto& [cam, s] : arrivals) {
    auto it = expected.find(cam);
    if (it == expected.end() || s > it->second) expected[cam] = s;
  }
  EXPECT_EQ(map.seq_snapshot(), expected);
}

TEST(PubSubLoopback, NoRepliesAndNewestWins) {
  ConflationMap map;
  SessionServer server({"127.0.0.1", 0}, TransportMode::pubsub, {[&](FrameMessage&& m) { map.offer(std::move(m)); }, {}});
  server.start();
  CameraNode node(CameraNodeOptions{{"127.0.0.1", server.port()}, TransportMode::pubsub});
  for (std::uint64_t s = 0; s < 200; ++s) node.mailbox().put(frame("cam0", s));
  node.mailbox().close();
  const auto stats = node.run();
  EXPECT_EQ(stats.acked, 0U);
  ASSERT_GE(stats.sent, 1U);
  const auto last_sent = stats.sent_seqs.back();
  EXPECT_EQ(last_sent, 199U);
  const auto got = map.wait_newer("cam0", 198, 2000ms);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->header.seq, 199U);
  server.stop();
  EXPECT_EQ(server.stats().reps, 0U);
}
