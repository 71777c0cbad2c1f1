//! Framed transport for client messages.
//!
//! Every frame is a canonical-encoded [`ClientMessage`] or [`Response`]. A
//! dropped message is answered with an empty frame so socket clients never
//! block on a censoring operator.

use std::io;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};

use crate::codec::{read_frame, write_frame, Decode, Encode};

use super::{ClientMessage, Node, Response};

/// In-process duplex channel to a node: encodes, hands the frame over, and
/// decodes the reply, exactly as the socket path does.
pub struct Connection<'a> {
    node: &'a mut Node,
}

impl<'a> Connection<'a> {
    pub fn new(node: &'a mut Node) -> Self {
        Connection { node }
    }

    pub fn request(&mut self, msg: &ClientMessage) -> Option<Response> {
        let reply = self.node.handle_frame(&msg.encode())?;
        Response::decode(&reply).ok()
    }
}

/// Serves frames from `listener` until it fails, one thread per connection.
pub fn serve(listener: TcpListener, node: Arc<Mutex<Node>>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let node = Arc::clone(&node);
        std::thread::spawn(move || {
            let _ = serve_conn(stream, &node);
        });
    }
    Ok(())
}

fn serve_conn(mut stream: TcpStream, node: &Mutex<Node>) -> io::Result<()> {
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = node
            .lock()
            .map_err(|_| io::Error::other("node lock poisoned"))?
            .handle_frame(&frame)
            .unwrap_or_default();
        write_frame(&mut stream, &reply)?;
    }
}

pub struct TcpClient {
    stream: TcpStream,
}

impl TcpClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        Ok(TcpClient {
            stream: TcpStream::connect(addr)?,
        })
    }

    /// `Ok(None)` when the operator dropped the message.
    pub fn request(&mut self, msg: &ClientMessage) -> io::Result<Option<Response>> {
        write_frame(&mut self.stream, &msg.encode())?;
        let reply = read_frame(&mut self.stream)?;
        if reply.is_empty() {
            return Ok(None);
        }
        Response::decode(&reply)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}
