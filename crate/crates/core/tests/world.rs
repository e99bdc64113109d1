use std::collections::HashSet;

use overlaysim::measure::{collect, BranchStatus, TxFate};
use overlaysim::{Config, NodeId, SimTime, Strategy, World};

fn small(strategy: Strategy) -> Config {
    Config {
        node_count: 24,
        peer_count: 3,
        strategy,
        duration: 3600.0,
        block_interval: 120.0,
        ..Config::default()
    }
}

#[test]
fn nodes_agree_on_the_tip_after_draining() {
    for strategy in Strategy::ALL {
        let mut world = World::new(small(strategy), 5).unwrap();
        world.run();
        let tip = world.node(NodeId::MEASUREMENT).tip();
        assert!(world.nodes().iter().all(|n| n.tip() == tip), "{strategy}");
        assert_eq!(world.pending_events(), 0, "{strategy}: drain did not reach quiescence");
    }
}

#[test]
fn every_transaction_reaches_every_node_without_blocks() {
    let config = Config {
        block_interval: 1e12,
        duration: 600.0,
        ..small(Strategy::Random)
    };
    let mut world = World::new(config, 8).unwrap();
    world.run();
    let txs: Vec<_> = world.tx_ids().collect();
    assert!(!txs.is_empty());
    for node in world.nodes() {
        assert_eq!(node.mempool().len(), txs.len(), "node {}", node.id());
        for &tx in &txs {
            let t_g = world.ledger().tx(tx).t_g;
            assert!(node.arrival(tx).unwrap() >= t_g);
        }
    }
}

#[test]
fn measurement_node_never_generates() {
    let mut world = World::new(small(Strategy::Normal), 3).unwrap();
    world.run();
    assert!(world.generation_log().iter().all(|r| r.node != NodeId::MEASUREMENT));
    assert!(world.ledger().txs().iter().all(|t| t.origin != NodeId::MEASUREMENT));
    assert!(world.generation_log().iter().all(|r| r.t_g < world.horizon()));
}

#[test]
fn datasets_join_and_agree() {
    let mut world = World::new(small(Strategy::Mixed), 11).unwrap();
    world.run();
    let data = collect(&world);

    let generated: HashSet<String> = data.generation.iter().map(|r| r.id.to_string()).collect();
    assert!(data
        .mempool
        .iter()
        .all(|r| generated.contains(&format!("tx{}", r.txid.0))));

    let heights: Vec<u64> = data.chain.iter().map(|r| r.b_height).collect();
    assert_eq!(heights, (0..heights.len() as u64).collect::<Vec<_>>());
    assert!(data
        .mempool
        .iter()
        .filter_map(|r| r.b_height)
        .all(|h| h < heights.len() as u64));

    let fork_rows = data.tree.iter().filter(|r| r.status == BranchStatus::ValidFork).count();
    assert_eq!(fork_rows, data.summary.fork_count);
    assert_eq!(data.forks.len(), data.summary.fork_count);

    for m in &data.metrics {
        if let Some(c) = m.confirmation {
            assert_eq!(m.fate, TxFate::Confirmed);
            assert!(c >= SimTime::ZERO);
        }
    }
    let s = &data.summary;
    assert_eq!(s.generated_txs, s.confirmed_txs + s.pending_txs + s.lost_txs);
    assert_eq!(s.pending_txs, world.node(NodeId::MEASUREMENT).mempool().len());
    assert_eq!(s.blocks_mined, data.blocks.len());
}

#[test]
fn chain_blocks_respect_capacity_and_size() {
    let config = Config {
        block_capacity: 50,
        ..small(Strategy::Normal)
    };
    let mut world = World::new(config, 2).unwrap();
    world.run();
    for b in world.ledger().blocks() {
        assert!(b.txs.len() <= 50);
        assert_eq!(b.size, 80 + 500 * b.txs.len() as u64);
    }
}

#[test]
fn trace_records_sends_and_receipts() {
    let config = Config {
        node_count: 6,
        peer_count: 2,
        duration: 120.0,
        ..Config::default()
    };
    let mut world = World::new(config, 4).unwrap();
    let path = tempfile::NamedTempFile::new().unwrap();
    world.set_trace(Box::new(path.reopen().unwrap())).unwrap();
    world.run();
    world.flush_trace().unwrap();
    let text = std::fs::read_to_string(path.path()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,node,direction,kind,items"));
    let rows: Vec<&str> = lines.collect();
    let sends = rows.iter().filter(|l| l.contains(",send,")).count();
    let recvs = rows.iter().filter(|l| l.contains(",recv,")).count();
    assert!(sends > 0);
    assert_eq!(sends, recvs);
}

#[test]
fn run_until_stops_at_the_requested_time() {
    let mut world = World::new(small(Strategy::Normal), 1).unwrap();
    world.start_generators();
    let t = SimTime::from_secs_f64(100.0);
    world.run_until(t);
    assert_eq!(world.now(), t);
    assert!(world.generation_log().iter().all(|r| r.t_g <= t));
}
