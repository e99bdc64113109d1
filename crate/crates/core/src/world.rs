//! One replication: the event loop driving nodes, links and generators.

use std::io::Write;

use crate::config::Config;
use crate::error::SimError;
use crate::measure::GenerationLogRow;
use crate::net::{Item, Message, MessageKind, Network};
use crate::protocol::{BlockId, Ledger, Node, NodeParams, Output, TxId};
use crate::queue::EventQueue;
use crate::rng::RngStream;
use crate::time::SimTime;
use crate::topology::{build_overlay, NodeId, OverlayGraph};
use crate::workload::{generators, GenKind, Generator, Next};

#[derive(Clone, Debug)]
pub enum SimEvent {
    /// `generator` is the index of the generator to reschedule; `None` for one-shot injections.
    GenerateTx {
        node: NodeId,
        generator: Option<usize>,
    },
    GenerateBlock {
        node: NodeId,
        generator: Option<usize>,
    },
    MsgDelivery(Message),
    ValidationDone {
        node: NodeId,
        item: Item,
        from: Option<NodeId>,
    },
}

type TraceWriter = csv::Writer<Box<dyn Write + Send>>;

pub struct World {
    config: Config,
    graph: OverlayGraph,
    queue: EventQueue<SimEvent>,
    ledger: Ledger,
    nodes: Vec<Node>,
    network: Network,
    net_rngs: Vec<RngStream>,
    fee_rngs: Vec<RngStream>,
    generators: Vec<Generator>,
    horizon: SimTime,
    generation_log: Vec<GenerationLogRow>,
    /// Per block, the time each node connected it (`SimTime::MAX` if never).
    block_arrivals: Vec<Vec<SimTime>>,
    trace: Option<TraceWriter>,
    scratch: Vec<Output>,
}

impl World {
    /// Validates `config` and builds the overlay from the `topology` stream of `seed`.
    pub fn new(config: Config, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let graph = build_overlay(&config, &mut RngStream::new(seed, "topology"))?;
        Ok(Self::with_graph(config, seed, graph))
    }

    /// Uses a caller-supplied overlay, for constructed scenarios.
    pub fn with_graph(config: Config, seed: u64, graph: OverlayGraph) -> Self {
        let params = NodeParams::from_config(&config);
        let nodes = graph
            .nodes()
            .map(|k| Node::new(k, graph.neighbors(k).to_vec(), params))
            .collect();
        let network = Network::from_config(&graph, &config);
        let net_rngs = graph
            .nodes()
            .map(|k| RngStream::new(seed, format!("node-{k}-net")))
            .collect();
        let fee_rngs = graph
            .nodes()
            .map(|k| RngStream::new(seed, format!("node-{k}-fee")))
            .collect();
        let horizon = SimTime::from_secs_f64(config.duration);
        let generators = if graph.node_count() == config.node_count {
            generators(&config, seed, horizon)
        } else {
            Vec::new()
        };
        Self {
            ledger: Ledger::new(config.block_header_size as u64),
            block_arrivals: vec![vec![SimTime::ZERO; graph.node_count()]],
            config,
            graph,
            queue: EventQueue::new(),
            nodes,
            network,
            net_rngs,
            fee_rngs,
            generators,
            horizon,
            generation_log: Vec::new(),
            trace: None,
            scratch: Vec::new(),
        }
    }

    /// Streams every message send and receipt as CSV rows.
    pub fn set_trace(&mut self, out: Box<dyn Write + Send>) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "node", "direction", "kind", "items"])?;
        self.trace = Some(w);
        Ok(())
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn graph(&self) -> &OverlayGraph {
        &self.graph
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.queue.processed()
    }

    pub fn generation_log(&self) -> &[GenerationLogRow] {
        &self.generation_log
    }

    /// When each node connected `block`; `None` for nodes that never did.
    pub fn block_arrivals(&self, block: BlockId) -> Vec<Option<SimTime>> {
        self.block_arrivals[block.index()]
            .iter()
            .map(|&t| (t != SimTime::MAX).then_some(t))
            .collect()
    }

    /// Schedules the first draw of every generator.
    pub fn start_generators(&mut self) {
        for i in 0..self.generators.len() {
            self.reschedule(i, SimTime::ZERO);
        }
    }

    /// Creates one transaction at `node` at time `at`, outside the generators.
    pub fn inject_tx(&mut self, node: NodeId, at: SimTime) {
        self.queue.schedule(at, SimEvent::GenerateTx { node, generator: None });
    }

    /// Mines one block at `node` at time `at`, outside the generators.
    pub fn inject_block(&mut self, node: NodeId, at: SimTime) {
        self.queue
            .schedule(at, SimEvent::GenerateBlock { node, generator: None });
    }

    /// Processes every event up to and including `until`, then parks the clock there
    /// unless the queue ran dry.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(event) = self.queue.pop_until(until) {
            self.handle(event.payload);
        }
        if until != SimTime::MAX {
            self.queue.advance_to(until);
        }
    }

    /// Generation up to the horizon followed by the drain window, in which
    /// relaying continues but nothing new is generated.
    pub fn run(&mut self) {
        self.start_generators();
        self.run_until(self.horizon);
        self.drain();
    }

    pub fn drain(&mut self) {
        let end = self.horizon + SimTime::from_secs_f64(self.config.drain_window);
        while let Some(event) = self.queue.pop_until(end) {
            self.handle(event.payload);
        }
    }

    fn reschedule(&mut self, i: usize, now: SimTime) {
        let g = &mut self.generators[i];
        if let Next::At(at) = g.next_generation(now) {
            let node = g.node;
            let event = match g.kind {
                GenKind::Tx => SimEvent::GenerateTx {
                    node,
                    generator: Some(i),
                },
                GenKind::Block => SimEvent::GenerateBlock {
                    node,
                    generator: Some(i),
                },
            };
            self.queue.schedule(at, event);
        }
    }

    fn handle(&mut self, event: SimEvent) {
        let now = self.queue.now();
        let mut out = std::mem::take(&mut self.scratch);
        let actor = match event {
            SimEvent::GenerateTx { node, generator } => {
                let fee = self.fee_rngs[node.index()].range_inclusive(1, 1000) as u32;
                let tx = self.ledger.add_tx(node, now, self.config.tx_size, fee);
                self.generation_log.push(GenerationLogRow {
                    node,
                    kind: GenKind::Tx,
                    id: Item::Tx(tx),
                    t_g: now,
                });
                self.nodes[node.index()].on_local_tx(tx, now, &mut out);
                if let Some(i) = generator {
                    self.reschedule(i, now);
                }
                node
            }
            SimEvent::GenerateBlock { node, generator } => {
                let block = self.nodes[node.index()].assemble_block(now, &mut self.ledger, &mut out);
                self.generation_log.push(GenerationLogRow {
                    node,
                    kind: GenKind::Block,
                    id: Item::Block(block),
                    t_g: now,
                });
                if let Some(i) = generator {
                    self.reschedule(i, now);
                }
                node
            }
            SimEvent::MsgDelivery(msg) => {
                self.trace_msg(now, msg.dst, "recv", &msg);
                let node = &mut self.nodes[msg.dst.index()];
                match msg.kind {
                    MessageKind::Inv => node.on_inv(msg.src, &msg.items, &mut out),
                    MessageKind::GetData => node.on_getdata(msg.src, &msg.items, &mut out),
                    MessageKind::TxPayload => {
                        if let Item::Tx(tx) = msg.items[0] {
                            node.on_tx(msg.src, tx, now, &mut out);
                        }
                    }
                    MessageKind::BlockPayload => {
                        if let Item::Block(b) = msg.items[0] {
                            node.on_block(msg.src, b, now, &mut out);
                        }
                    }
                }
                msg.dst
            }
            SimEvent::ValidationDone { node, item, from } => {
                self.nodes[node.index()].on_validation_done(item, from, now, &self.ledger, &mut out);
                node
            }
        };
        self.apply(actor, now, &mut out);
        out.clear();
        self.scratch = out;
    }

    fn apply(&mut self, actor: NodeId, now: SimTime, out: &mut Vec<Output>) {
        for output in out.drain(..) {
            match output {
                Output::Send { to, kind, items } => {
                    let sizes = self.network.sizes();
                    let body_size = match (kind, items[0]) {
                        (MessageKind::Inv | MessageKind::GetData, _) => sizes.inventory(items.len()),
                        (MessageKind::TxPayload, Item::Tx(tx)) => self.ledger.tx(tx).size as u64,
                        (MessageKind::BlockPayload, Item::Block(b)) => self.ledger.block(b).size,
                        _ => unreachable!("payload kind does not match its item"),
                    };
                    let msg = Message {
                        kind,
                        items,
                        body_size,
                        src: actor,
                        dst: to,
                        send_time: now,
                    };
                    let arrival = self.network.deliver(&msg, now, &mut self.net_rngs[actor.index()]);
                    self.trace_msg(now, actor, "send", &msg);
                    self.queue.schedule(arrival, SimEvent::MsgDelivery(msg));
                }
                Output::ValidationDone { at, item, from } => {
                    self.queue.schedule(
                        at,
                        SimEvent::ValidationDone {
                            node: actor,
                            item,
                            from,
                        },
                    );
                }
                Output::BlockConnected { block } => {
                    if self.block_arrivals.len() <= block.index() {
                        self.block_arrivals
                            .resize(block.index() + 1, vec![SimTime::MAX; self.nodes.len()]);
                    }
                    let slot = &mut self.block_arrivals[block.index()][actor.index()];
                    if *slot == SimTime::MAX {
                        *slot = now;
                    }
                }
                Output::MempoolAdded { .. } | Output::TipChanged { .. } => {}
            }
        }
    }

    fn trace_msg(&mut self, now: SimTime, node: NodeId, direction: &str, msg: &Message) {
        if let Some(w) = &mut self.trace {
            let items: Vec<String> = msg.items.iter().map(Item::to_string).collect();
            // Trace output is best effort; a failing sink must not abort the run.
            let _ = w.write_record([
                now.to_string(),
                node.to_string(),
                direction.to_string(),
                msg.kind.as_str().to_string(),
                items.join(";"),
            ]);
        }
    }

    pub fn flush_trace(&mut self) -> Result<(), SimError> {
        if let Some(w) = &mut self.trace {
            w.flush().map_err(|e| SimError::io("trace", e))?;
        }
        Ok(())
    }

    /// Ids of all transactions generated so far.
    pub fn tx_ids(&self) -> impl Iterator<Item = TxId> + '_ {
        self.ledger.txs().iter().map(|t| t.id)
    }
}
