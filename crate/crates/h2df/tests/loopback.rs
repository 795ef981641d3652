//! UDP server and client on the loopback interface.

use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use h2df::serve::{serve, sim_engine_client, ClientOptions, ServeOptions};
use h2df_core::agents::Policy;
use h2df_core::engine::{collect_dataset, MeasurementNoise, PrbsConfig, SplitFractions};
use h2df_core::env::{generate_reference, EpisodeConfig, ObservationRanges, RewardConfig, SafePolytope};
use h2df_core::nn::{Activation, Mlp};
use h2df_core::rng;
use h2df_core::runtime::wire::{ACTION_LEN, STATE_LEN};
use h2df_core::runtime::{ActionPacket, CascadeConfig, Controller, StatePacket, Status};
use h2df_core::sysid::PlantModel;

fn plant() -> Arc<PlantModel> {
    static PLANT: OnceLock<Arc<PlantModel>> = OnceLock::new();
    PLANT
        .get_or_init(|| {
            let data = collect_dataset(500, &PrbsConfig::default(), SplitFractions::default(), &MeasurementNoise::NONE).unwrap();
            Arc::new(PlantModel::for_dataset(&data, 1).unwrap())
        })
        .clone()
}

fn controller() -> Controller {
    let policy = Policy::new(Mlp::new(&[16, 32, 4], Activation::Tanh, Activation::Tanh, &mut rng::seeded(8)), None).unwrap();
    Controller::new(vec![(0, policy)], CascadeConfig::single(0, 0.0, 17.0), plant(), ObservationRanges::default()).unwrap()
}

fn spawn_server(deadline_ms: u64, max_replies: u64) -> (std::net::SocketAddr, std::thread::JoinHandle<h2df::serve::ServeStats>, Arc<AtomicBool>) {
    let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = socket.local_addr().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let handle = std::thread::spawn(move || {
        let mut ctl = controller();
        let opts = ServeOptions { deadline: Duration::from_millis(deadline_ms), max_replies: Some(max_replies), metrics_every: 1 };
        serve(&socket, &mut ctl, &opts, &stop2, None).unwrap()
    });
    (addr, handle, stop)
}

fn client_socket() -> UdpSocket {
    let s = UdpSocket::bind("127.0.0.1:0").unwrap();
    s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    s
}

fn state(seq: u32) -> StatePacket {
    StatePacket { seq, imep: 5.0, nox: 100.0, soot: 5.0, mprr: 2.0, reference: 6.0 }
}

fn exchange(s: &UdpSocket, addr: std::net::SocketAddr, p: &StatePacket) -> Option<ActionPacket> {
    s.send_to(&p.encode(), addr).unwrap();
    let mut buf = [0u8; 64];
    match s.recv_from(&mut buf) {
        Ok((n, _)) => {
            assert_eq!(n, ACTION_LEN);
            Some(ActionPacket::decode(&buf[..n]).unwrap())
        }
        Err(_) => None,
    }
}

#[test]
fn closed_loop_episode_over_udp() {
    let (addr, server, _) = spawn_server(1000, 625);
    let reference = generate_reference(&EpisodeConfig { length: 625, ..EpisodeConfig::validation() }).unwrap();
    let opts = ClientOptions {
        timeout: Duration::from_secs(2),
        retries: 2,
        engine_seed: 3,
        noise: MeasurementNoise::one_percent(),
        reward: RewardConfig::default(),
        polytope: SafePolytope::default(),
    };
    let run = sim_engine_client(&client_socket(), addr, &reference, &opts).unwrap();
    let stats = server.join().unwrap();
    assert!(run.complete);
    assert_eq!(run.trace.len(), 625);
    assert_eq!((run.timeouts, run.rejected), (0, 0));
    assert_eq!((stats.replies, stats.drops(), stats.held, stats.faults), (625, 0, 0, 0));
    for (k, (sent, reply)) in run.sent.iter().zip(&run.replies).enumerate() {
        assert_eq!(sent.seq, k as u32 + 1);
        assert_eq!(reply.seq, sent.seq);
        assert_eq!(reply.status, Status::Ok);
        assert!(reply.actions.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn stale_and_malformed_packets_get_no_reply() {
    let (addr, server, stop) = spawn_server(1000, 3);
    let s = client_socket();
    assert_eq!(exchange(&s, addr, &state(5)).unwrap().seq, 5);
    assert_eq!(exchange(&s, addr, &state(6)).unwrap().seq, 6);
    s.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
    assert!(exchange(&s, addr, &state(5)).is_none());
    assert!(exchange(&s, addr, &state(6)).is_none());
    s.send_to(&state(9).encode()[..STATE_LEN - 1], addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    assert_eq!(exchange(&s, addr, &state(7)).unwrap().seq, 7);
    let stats = server.join().unwrap();
    stop.store(true, Ordering::Relaxed);
    assert_eq!((stats.replies, stats.stale, stats.malformed), (3, 2, 1));
}

#[test]
fn deadline_miss_holds_the_last_action() {
    let (addr, server, _) = spawn_server(30, 3);
    let s = client_socket();
    let first = exchange(&s, addr, &state(1)).unwrap();
    std::thread::sleep(Duration::from_millis(120));
    let held = exchange(&s, addr, &StatePacket { imep: 9.0, reference: 10.0, ..state(2) }).unwrap();
    assert_eq!(held.status, Status::HeldLastAction);
    assert_eq!(held.actions, first.actions);
    let next = exchange(&s, addr, &state(3)).unwrap();
    assert_eq!(next.status, Status::Ok);
    let stats = server.join().unwrap();
    assert_eq!(stats.held, 1);
    assert!(stats.deadline_misses >= 1);
}

#[test]
fn non_finite_state_is_a_fault() {
    let (addr, server, _) = spawn_server(1000, 2);
    let s = client_socket();
    let a = exchange(&s, addr, &state(1)).unwrap();
    let f = exchange(&s, addr, &StatePacket { imep: f32::NAN, ..state(2) }).unwrap();
    assert_eq!(f.status, Status::Fault);
    assert_eq!(f.actions, a.actions);
    assert_eq!(server.join().unwrap().faults, 1);
}
