//! Token-ring termination detection over FIFO channels.
//!
//! Servers are white or black and pass a token around the ring `1 → 2 → … →
//! ℓ → 1`. A server turns black when it sends to a lower id. On its own that
//! rule misses a message still in flight while the token overtakes it on a
//! different channel, so every server also keeps a sent-minus-received
//! counter of PAR/FCT messages, the token sums the counters, and a server
//! turns black whenever it receives one. Server 1 declares termination only
//! when the token returns white, it is itself white, and the sum is zero.

use crate::messaging::{Colour, Token};
use crate::model::ServerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RingAction {
    /// Nothing to do: the token is elsewhere.
    Wait,
    Forward {
        to: ServerId,
        token: Token,
    },
    Terminate,
}

#[derive(Clone, Debug)]
pub struct RingState {
    id: ServerId,
    servers: usize,
    colour: Colour,
    balance: i64,
    token: Option<Token>,
    /// Server 1 only: the held token has completed a round.
    returned: bool,
    rounds: u64,
}

impl RingState {
    /// Every server starts white; server 1 holds a white token.
    pub fn new(id: ServerId, servers: usize) -> Self {
        assert!(servers >= 1 && id.index() < servers);
        RingState {
            id,
            servers,
            colour: Colour::White,
            balance: 0,
            token: (id.0 == 1).then_some(Token {
                colour: Colour::White,
                balance: 0,
            }),
            returned: false,
            rounds: 0,
        }
    }

    pub fn successor(&self) -> ServerId {
        ServerId::from_index((self.id.index() + 1) % self.servers)
    }

    pub fn colour(&self) -> Colour {
        self.colour
    }

    pub fn balance(&self) -> i64 {
        self.balance
    }

    pub fn holds_token(&self) -> bool {
        self.token.is_some()
    }

    /// Rounds started by server 1.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// A PAR or FCT message leaves for `to` over the network.
    pub fn on_send(&mut self, to: ServerId) {
        self.balance += 1;
        if to < self.id {
            self.colour = Colour::Black;
        }
    }

    /// A PAR or FCT message arrived from the network.
    pub fn on_receive(&mut self) {
        self.balance -= 1;
        self.colour = Colour::Black;
    }

    pub fn on_token(&mut self, token: Token) {
        debug_assert!(self.token.is_none(), "two tokens in the ring");
        self.token = Some(token);
        self.returned = self.id.0 == 1;
    }

    /// Called when the server has no pending work.
    pub fn on_idle(&mut self) -> RingAction {
        let Some(mut token) = self.token else {
            return RingAction::Wait;
        };
        if self.id.0 == 1 {
            if self.servers == 1 {
                return RingAction::Terminate;
            }
            if self.returned
                && token.colour == Colour::White
                && self.colour == Colour::White
                && token.balance + self.balance == 0
            {
                return RingAction::Terminate;
            }
            self.rounds += 1;
            self.token = None;
            self.returned = false;
            self.colour = Colour::White;
            return RingAction::Forward {
                to: self.successor(),
                token: Token {
                    colour: Colour::White,
                    balance: 0,
                },
            };
        }
        self.token = None;
        token.balance += self.balance;
        if self.colour == Colour::Black {
            token.colour = Colour::Black;
        }
        self.colour = Colour::White;
        RingAction::Forward {
            to: self.successor(),
            token,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white() -> Token {
        Token {
            colour: Colour::White,
            balance: 0,
        }
    }

    fn forwarded(action: RingAction) -> (ServerId, Token) {
        match action {
            RingAction::Forward { to, token } => (to, token),
            other => panic!("expected a forward, got {other:?}"),
        }
    }

    #[test]
    fn origin_starts_round_with_white_token() {
        let mut r = RingState::new(ServerId(1), 3);
        assert!(r.holds_token());
        let (to, t) = forwarded(r.on_idle());
        assert_eq!(to, ServerId(2));
        assert_eq!(t.colour, Colour::White);
        assert!(!r.holds_token());
        assert_eq!(r.on_idle(), RingAction::Wait);
    }

    #[test]
    fn black_server_blackens_token_and_whitens() {
        let mut r = RingState::new(ServerId(3), 5);
        r.on_send(ServerId(1));
        assert_eq!(r.colour(), Colour::Black);
        r.on_token(white());
        let (to, t) = forwarded(r.on_idle());
        assert_eq!(to, ServerId(4));
        assert_eq!(t.colour, Colour::Black);
        assert_eq!(r.colour(), Colour::White);
    }

    #[test]
    fn forward_sends_keep_colour() {
        let mut r = RingState::new(ServerId(1), 3);
        r.on_send(ServerId(2));
        assert_eq!(r.colour(), Colour::White);
    }

    #[test]
    fn ring_of_one_terminates_at_once() {
        let mut r = RingState::new(ServerId(1), 1);
        assert_eq!(r.on_idle(), RingAction::Terminate);
    }

    #[test]
    fn white_return_terminates_black_return_restarts() {
        let mut one = RingState::new(ServerId(1), 2);
        let mut two = RingState::new(ServerId(2), 2);
        let (_, t) = forwarded(one.on_idle());
        two.on_token(t);
        let (to, t) = forwarded(two.on_idle());
        assert_eq!(to, ServerId(1));
        one.on_token(t);
        assert_eq!(one.on_idle(), RingAction::Terminate);

        let mut one = RingState::new(ServerId(1), 2);
        let mut two = RingState::new(ServerId(2), 2);
        let (_, t) = forwarded(one.on_idle());
        two.on_send(ServerId(1));
        one.on_receive();
        two.on_token(t);
        one.on_token(forwarded(two.on_idle()).1);
        let (_, again) = forwarded(one.on_idle());
        assert_eq!(again.colour, Colour::White);
        assert_eq!(one.rounds(), 2);
    }

    /// Server 1 sends to 3, then passes the token 1 → 2 → 3 before the
    /// message lands. Colours alone would let the token return white.
    #[test]
    fn in_flight_message_blocks_termination() {
        let mut ring: Vec<RingState> = (1..=3).map(|k| RingState::new(ServerId(k), 3)).collect();
        let lap = |ring: &mut Vec<RingState>, t: Token| {
            ring[1].on_token(t);
            let (_, t) = forwarded(ring[1].on_idle());
            ring[2].on_token(t);
            let (_, t) = forwarded(ring[2].on_idle());
            ring[0].on_token(t);
            t
        };
        ring[0].on_send(ServerId(3));
        let (_, t) = forwarded(ring[0].on_idle());
        let back = lap(&mut ring, t);
        assert_eq!(back.colour, Colour::White);
        let (_, t) = forwarded(ring[0].on_idle());

        // The message lands before the second lap reaches server 3.
        ring[2].on_receive();
        let back = lap(&mut ring, t);
        assert_eq!(back.colour, Colour::Black);
        let (_, t) = forwarded(ring[0].on_idle());

        lap(&mut ring, t);
        assert_eq!(ring[0].on_idle(), RingAction::Terminate);
        assert_eq!(ring[0].rounds(), 3);
    }
}
